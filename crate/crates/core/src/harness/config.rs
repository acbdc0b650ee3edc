use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::Dataset;
use super::synthetic::{gen_synthetic_task, TaskKind};
use crate::error::{Error, Result};
use crate::nn::{LossKind, OptimizerSettings};

/// Where a task's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `blobs`, `xor_grid`, `rings` or `digits_subset`.
    pub kind: String,
    pub n: usize,
    pub classes: usize,
    /// Defaults to the run seed plus the task index.
    #[serde(default)]
    pub seed: Option<u64>,
    /// IDX files, `digits_subset` only.
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn task_kind(&self) -> Result<TaskKind> {
        match (self.kind.as_str(), &self.images, &self.labels) {
            ("digits_subset", Some(images), Some(labels)) => Ok(TaskKind::DigitsSubset {
                images: images.clone(),
                labels: labels.clone(),
            }),
            ("digits_subset", _, _) => Err(Error::Config("digits_subset needs `images` and `labels`".into())),
            (_, None, None) => self.kind.parse().map_err(|e: Error| Error::Config(e.to_string())),
            _ => Err(Error::Config(format!("`images`/`labels` do not apply to {}", self.kind))),
        }
    }

    pub fn generate(&self, default_seed: u64) -> Result<Dataset<f32>> {
        gen_synthetic_task(&self.task_kind()?, self.n, self.classes, self.seed.unwrap_or(default_seed))
    }
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

fn default_weight() -> f64 {
    1.0
}

fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Carrier outputs used by this task; defaults to the class count.
    #[serde(default)]
    pub outputs: Option<usize>,
    /// UTF-8 key. A task with neither `key` nor `key_file` trains the
    /// carrier directly.
    #[serde(default)]
    pub key: Option<String>,
    /// File whose raw bytes are the key.
    #[serde(default)]
    pub key_file: Option<PathBuf>,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl TaskConfig {
    pub fn is_keyed(&self) -> bool {
        self.key.is_some() || self.key_file.is_some()
    }

    pub fn key_bytes(&self) -> Result<Option<Vec<u8>>> {
        match (&self.key, &self.key_file) {
            (Some(_), Some(_)) => Err(Error::Config(format!("task {}: give `key` or `key_file`, not both", self.name))),
            (Some(k), None) => Ok(Some(k.as_bytes().to_vec())),
            (None, Some(p)) => std::fs::read(p).map(Some).map_err(|e| Error::io(p, e)),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    /// Group count for a group norm after every hidden dense layer.
    #[serde(default)]
    pub groups: Option<usize>,
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tasks: Vec<TaskConfig>,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.model.widths.len() < 2 || self.model.widths.contains(&0) {
            return bad("model.widths needs an input and an output width, all positive".into());
        }
        if self.model.groups == Some(0) {
            return bad("model.groups must be positive".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        self.optimizer.validate()?;
        let out = *self.model.widths.last().expect("checked length");
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("task name {:?} must be non-empty ASCII letters, digits, '_' or '-'", t.name));
            }
            if !names.insert(t.name.as_str()) {
                return bad(format!("task name {:?} repeats", t.name));
            }
            t.dataset.task_kind()?;
            if t.key.is_some() && t.key_file.is_some() {
                return bad(format!("task {}: give `key` or `key_file`, not both", t.name));
            }
            if t.key.as_deref() == Some("") {
                return bad(format!("task {}: empty key", t.name));
            }
            if t.outputs.unwrap_or(t.dataset.classes) > out {
                return bad(format!("task {}: needs more outputs than the model's {out}", t.name));
            }
        }
        if self.tasks.iter().filter(|t| !t.is_keyed()).count() > 1 {
            return bad("at most one task may be unkeyed".into());
        }
        Ok(())
    }

    /// SHA-256 of the JSON form with `output_dir` blanked, so that moving a
    /// run elsewhere does not change its fingerprint.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(json).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "tasks": [{"name": "only", "dataset": {"kind": "blobs", "n": 200, "classes": 4}}],
        "model": {"widths": [2, 8, 4]},
        "epochs": 1
    }"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.tasks[0].loss, LossKind::CrossEntropy);
        assert_eq!(c.tasks[0].batch_size, 64);
        assert_eq!(c.test_fraction, 0.25);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("\"epochs\": 1", "\"epochs\": 1, \"epoch\": 2");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn semantic_errors() {
        for (from, to) in [
            ("\"epochs\": 1", "\"epochs\": 0"),
            ("\"blobs\"", "\"spirals\""),
            ("[2, 8, 4]", "[2, 8, 3]"),
            ("\"only\"", "\"a b\""),
        ] {
            assert!(RunConfig::from_json(&MINIMAL.replace(from, to)).is_err(), "{to}");
        }
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
