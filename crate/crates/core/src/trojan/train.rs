use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::joint::{joint_loss_and_grad, TaskBatch};
use super::schedule::{KeySchedule, NormState, NormStates};
use super::view::PermutedView;
use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::nn::{LossKind, Network, OptimizerSettings, OptimizerState, Targets, Tensor};
use crate::scalar::Real;

/// One task trained into the carrier. Without a key the task sees the
/// carrier itself.
#[derive(Debug, Clone)]
pub struct TaskSpec<S> {
    pub name: String,
    pub train: Dataset<S>,
    pub loss: LossKind,
    pub outputs: usize,
    pub key: Option<Vec<u8>>,
    pub weight: f64,
    pub batch_size: usize,
}

impl<S: Real> TaskSpec<S> {
    pub fn new(name: impl Into<String>, train: Dataset<S>, loss: LossKind, key: Option<&[u8]>) -> Self {
        Self {
            name: name.into(),
            outputs: train.output_width(),
            train,
            loss,
            key: key.map(<[u8]>::to_vec),
            weight: 1.0,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrojanConfig<S> {
    pub tasks: Vec<TaskSpec<S>>,
    pub epochs: usize,
    pub optimizer: OptimizerSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetric {
    pub epoch: usize,
    pub task: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedTrojan<S> {
    pub carrier: Network<S>,
    pub norm_states: NormStates<S>,
    pub metrics: Vec<EpochMetric>,
}

/// Step schedule: ×0.1 from the halfway epoch, ×0.01 from three quarters.
pub fn learning_rate_for_epoch(base: f64, epoch: usize, epochs: usize) -> f64 {
    let mut lr = base;
    if 2 * epoch >= epochs {
        lr *= 0.1;
    }
    if 4 * epoch >= 3 * epochs {
        lr *= 0.1;
    }
    lr
}

impl<S: Real> TrojanConfig<S> {
    pub fn validate(&self, carrier: &Network<S>) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.optimizer.validate()?;
        if self.tasks.iter().filter(|t| t.key.is_none()).count() > 1 {
            return Err(Error::Config("at most one task may be unkeyed".into()));
        }
        for t in &self.tasks {
            if t.train.is_empty() {
                return Err(Error::Config(format!("task {}: empty dataset", t.name)));
            }
            if t.outputs == 0 || t.outputs > carrier.output_width() || t.outputs != t.train.output_width() {
                return Err(Error::Config(format!(
                    "task {}: {} outputs for a carrier with {} (dataset needs {})",
                    t.name,
                    t.outputs,
                    carrier.output_width(),
                    t.train.output_width()
                )));
            }
            if t.train.features() != carrier.input_width() {
                return Err(Error::Config(format!("task {}: input width mismatch", t.name)));
            }
            if t.batch_size == 0 || !(t.weight.is_finite() && t.weight >= 0.0) {
                return Err(Error::Config(format!("task {}: bad batch size or weight", t.name)));
            }
            if !t.loss.is_differentiable() {
                return Err(Error::Config(format!("task {}: {} cannot be trained", t.name, t.loss)));
            }
            if t.key.as_deref() == Some(&[][..]) {
                return Err(Error::Config(format!("task {}: empty key", t.name)));
            }
        }
        Ok(())
    }
}

/// Cycles through a dataset in reshuffled passes.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            cursor: 0,
            batch,
            rng,
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor = (start + self.batch).min(self.order.len());
        &self.order[start..self.cursor]
    }
}

fn task_seed(seed: u64, task: usize) -> u64 {
    seed ^ (task as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains the carrier on all tasks at once: every step draws one batch per
/// task and applies the summed gradient. Datasets shorter than the longest
/// one are cycled with reshuffling; an epoch is one pass over the longest.
pub fn train_trojan<S: Real>(mut carrier: Network<S>, config: &TrojanConfig<S>) -> Result<TrainedTrojan<S>> {
    config.validate(&carrier)?;
    let schedules: Vec<Option<KeySchedule>> = config
        .tasks
        .iter()
        .map(|t| t.key.as_deref().map(|k| KeySchedule::new(&carrier, k)).transpose())
        .collect::<Result<_>>()?;

    let mut norm_states = NormStates::new();
    if carrier.has_group_norm() {
        for s in schedules.iter().flatten() {
            norm_states.insert(s.norm_id(), NormState::from_network(&carrier));
        }
    }

    let mut samplers: Vec<Sampler> = config
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Sampler::new(t.train.len(), t.batch_size, task_seed(config.seed, i)))
        .collect();
    let steps = config
        .tasks
        .iter()
        .map(|t| t.train.len().div_ceil(t.batch_size))
        .max()
        .unwrap_or(1);

    let mut opt = OptimizerState::new(config.optimizer.clone());
    let mut metrics = Vec::with_capacity(config.epochs * config.tasks.len());

    for epoch in 0..config.epochs {
        opt.set_learning_rate(learning_rate_for_epoch(config.optimizer.lr, epoch, config.epochs));
        for step in 0..steps {
            let batches: Vec<(Tensor<S>, Targets<S>)> = samplers
                .iter_mut()
                .zip(&config.tasks)
                .map(|(s, t)| t.train.batch(s.next()))
                .collect::<Result<_>>()?;
            let task_batches: Vec<TaskBatch<'_, S>> = config
                .tasks
                .iter()
                .zip(&schedules)
                .zip(&batches)
                .map(|((t, sched), (x, y))| TaskBatch {
                    schedule: sched.as_ref(),
                    norm: sched.as_ref().and_then(|s| norm_states.get(&s.norm_id())),
                    kind: t.loss,
                    outputs: t.outputs,
                    weight: S::narrow(t.weight),
                    inputs: x,
                    targets: y,
                })
                .collect();
            let jg = joint_loss_and_grad(&carrier, &task_batches).map_err(|e| match e {
                Error::NonFinite(what) => Error::Divergence {
                    epoch,
                    step,
                    detail: format!("non-finite {what}"),
                },
                other => other,
            })?;
            drop(task_batches);

            // Carrier vectors first, then each keyed task's norm state.
            let mut grads = jg.carrier.vectors;
            let mut order = Vec::new();
            for (sched, ng) in schedules.iter().zip(jg.norm) {
                if let (Some(s), Some(ng)) = (sched, ng) {
                    grads.extend(ng.layers.into_iter().flat_map(|(g, b)| [g, b]));
                    order.push(s.norm_id());
                }
            }
            let mut owned_norms: Vec<NormState<S>> = order
                .iter()
                .map(|id| norm_states.get(id).cloned().expect("norm state created above"))
                .collect();
            {
                let mut params = carrier.params_mut();
                for n in owned_norms.iter_mut() {
                    params.extend(n.vectors_mut());
                }
                opt.step(&mut params, &grads)?;
            }
            for (id, n) in order.into_iter().zip(owned_norms) {
                norm_states.insert(id, n);
            }
        }

        for (t, sched) in config.tasks.iter().zip(&schedules) {
            let view = PermutedView::with_schedule(&carrier, sched.as_ref())?
                .with_norm_state(sched.as_ref().and_then(|s| norm_states.get(&s.norm_id())))?;
            let eval = t.train.evaluate(&view.materialize()?, t.loss)?;
            if !eval.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: steps,
                    detail: format!("task {} evaluates to a non-finite loss", t.name),
                });
            }
            metrics.push(EpochMetric {
                epoch: epoch + 1,
                task: t.name.clone(),
                loss: eval.loss,
                accuracy: eval.accuracy,
            });
        }
    }

    Ok(TrainedTrojan {
        carrier,
        norm_states,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct Extraction<S> {
    pub network: Network<S>,
    /// The key had no stored normalization state, so the carrier's was used.
    pub used_public_norm: bool,
}

/// The network a key holder obtains. Without a key this is the carrier,
/// unchanged.
pub fn extract<S: Real>(carrier: &Network<S>, key: Option<&[u8]>, norm_states: &NormStates<S>) -> Result<Extraction<S>> {
    let Some(key) = key else {
        return Ok(Extraction {
            network: carrier.clone(),
            used_public_norm: false,
        });
    };
    let schedule = KeySchedule::new(carrier, key)?;
    let norm = norm_states.get(&schedule.norm_id());
    let used_public_norm = carrier.has_group_norm() && norm.is_none();
    if used_public_norm {
        log::warn!("no normalization state stored for this key; falling back to the carrier's");
    }
    let network = PermutedView::with_schedule(carrier, Some(&schedule))?
        .with_norm_state(norm)?
        .materialize()?;
    Ok(Extraction {
        network,
        used_public_norm,
    })
}
