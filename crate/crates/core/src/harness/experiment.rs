use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::data::{write_csv, Dataset, Evaluation};
use super::atomic_write;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::trojan::{extract, train_trojan, EpochMetric, NormStateId, TaskSpec, TrainedTrojan, TrojanConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub name: String,
    pub dataset: String,
    pub keyed: bool,
    /// Present for keyed tasks; never the key itself.
    pub norm_state_id: Option<String>,
    /// What an inspector sees: the carrier scored on this task.
    pub public_view: Evaluation,
    /// What the key holder sees. `None` for the unkeyed task.
    pub keyed_view: Option<Evaluation>,
    pub final_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: usize,
    pub parameters: usize,
    pub key_states: usize,
    pub tasks: Vec<TaskSummary>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub summary: Summary,
    pub trained: TrainedTrojan<f32>,
    pub checkpoint: Checkpoint,
    /// Held-out split of each task, in config order.
    pub test_sets: Vec<Dataset<f32>>,
}

/// Trains and evaluates without touching the output directory.
pub fn execute(config: &RunConfig) -> Result<Experiment> {
    config.validate()?;
    let mut specs = Vec::with_capacity(config.tasks.len());
    let mut test_sets = Vec::with_capacity(config.tasks.len());
    let mut keys = Vec::with_capacity(config.tasks.len());
    for (i, t) in config.tasks.iter().enumerate() {
        let full = t.dataset.generate(config.seed.wrapping_add(i as u64))?;
        let (mut train, mut test) = full.split(config.test_fraction, config.seed)?;
        train.name = t.name.clone();
        test.name = t.name.clone();
        let key = t.key_bytes()?;
        let mut spec = TaskSpec::new(&t.name, train, t.loss, key.as_deref());
        spec.outputs = t.outputs.unwrap_or(spec.outputs);
        spec.weight = t.weight;
        spec.batch_size = t.batch_size;
        specs.push(spec);
        test_sets.push(test);
        keys.push(key);
    }
    let carrier = Network::mlp(&config.model.widths, config.model.groups, config.seed)?;
    let trojan = TrojanConfig {
        tasks: specs,
        epochs: config.epochs,
        optimizer: config.optimizer.clone(),
        seed: config.seed,
    };
    let trained = train_trojan(carrier, &trojan)?;

    let mut tasks = Vec::with_capacity(config.tasks.len());
    for ((t, test), key) in config.tasks.iter().zip(&test_sets).zip(&keys) {
        let public_view = test.evaluate(&trained.carrier, t.loss)?;
        let keyed_view = match key {
            Some(k) => Some(test.evaluate(&extract(&trained.carrier, Some(k), &trained.norm_states)?.network, t.loss)?),
            None => None,
        };
        tasks.push(TaskSummary {
            name: t.name.clone(),
            dataset: t.dataset.kind.clone(),
            keyed: key.is_some(),
            norm_state_id: key.as_ref().map(|k| NormStateId::for_key(k).to_string()),
            final_accuracy: keyed_view.unwrap_or(public_view).accuracy,
            public_view,
            keyed_view,
        });
    }
    let config_hash = config.hash();
    let checkpoint = Checkpoint {
        network: trained.carrier.clone(),
        norm_states: trained.norm_states.clone(),
        seed: config.seed,
        config_hash,
    };
    let summary = Summary {
        seed: config.seed,
        config_hash: hex::encode(config_hash),
        epochs: config.epochs,
        parameters: trained.carrier.param_count(),
        key_states: trained.norm_states.len(),
        tasks,
    };
    Ok(Experiment {
        summary,
        trained,
        checkpoint,
        test_sets,
    })
}

pub fn metrics_csv(metrics: &[EpochMetric]) -> String {
    let mut out = String::from("epoch,task,loss,accuracy\n");
    for m in metrics {
        let acc = m.accuracy.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", m.epoch, m.task, m.loss, acc));
    }
    out
}

/// Runs [`execute`] and writes `metrics.csv`, `summary.json`,
/// `carrier.ckpt` and `<task>_test.csv` into `config.output_dir`.
pub fn run_experiment(config: &RunConfig) -> Result<Experiment> {
    let exp = execute(config)?;
    write_reports(&exp, &config.output_dir)?;
    Ok(exp)
}

pub fn write_reports(exp: &Experiment, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    atomic_write(&dir.join("metrics.csv"), metrics_csv(&exp.trained.metrics).as_bytes())?;
    let summary = serde_json::to_vec_pretty(&exp.summary).map_err(|e| Error::Parse(e.to_string()))?;
    atomic_write(&dir.join("summary.json"), &summary)?;
    exp.checkpoint.save(&dir.join("carrier.ckpt"))?;
    for test in &exp.test_sets {
        write_csv(test, &dir.join(format!("{}_test.csv", test.name)))?;
    }
    Ok(())
}
