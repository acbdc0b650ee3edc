use super::schedule::{KeySchedule, NormState};
use super::view::PermutedView;
use crate::error::{Error, Result};
use crate::nn::{loss_and_grad, loss_eval, truncate_outputs, Gradients, LossKind, Network, ParamSet, Targets, Tensor};
use crate::scalar::Real;

/// One task's contribution to a joint step: a batch, how to read the carrier
/// for it, and how to score it.
#[derive(Debug, Clone, Copy)]
pub struct TaskBatch<'a, S> {
    pub schedule: Option<&'a KeySchedule>,
    pub norm: Option<&'a NormState<S>>,
    pub kind: LossKind,
    /// Leading carrier outputs used by this task.
    pub outputs: usize,
    pub weight: S,
    pub inputs: &'a Tensor<S>,
    pub targets: &'a Targets<S>,
}

impl<'a, S: Real> TaskBatch<'a, S> {
    fn view(&self, carrier: &'a Network<S>) -> Result<PermutedView<'a, S>> {
        PermutedView::with_schedule(carrier, self.schedule)?.with_norm_state(self.norm)
    }
}

#[derive(Debug, Clone)]
pub struct JointGradient<S> {
    /// Weighted sum of task losses.
    pub loss: S,
    /// Unweighted mean loss of each task.
    pub task_losses: Vec<S>,
    pub carrier: Gradients<S>,
    /// Gradient of each task's own normalization state, when it has one.
    pub norm: Vec<Option<NormState<S>>>,
}

/// Forward-only weighted total loss.
pub fn joint_loss<S: Real>(carrier: &Network<S>, tasks: &[TaskBatch<'_, S>]) -> Result<S> {
    let mut total = S::zero();
    for t in tasks {
        let logits = t.view(carrier)?.forward(t.inputs)?;
        let pred = truncate_outputs(&logits, t.outputs)?;
        total = total + t.weight * loss_eval(&pred, t.targets, t.kind)?;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("joint loss".into()));
    }
    Ok(total)
}

/// `L = Σ_t weight_t · L_t` and its gradient with respect to the shared
/// carrier storage. Each keyed task differentiates its materialized view and
/// scatters the result back through the inverse permutation.
pub fn joint_loss_and_grad<S: Real>(carrier: &Network<S>, tasks: &[TaskBatch<'_, S>]) -> Result<JointGradient<S>> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("no tasks".into()));
    }
    let specs = carrier.param_specs();
    let mut grads = ParamSet::zeros(&specs);
    let mut total = S::zero();
    let mut task_losses = Vec::with_capacity(tasks.len());
    let mut norm_grads = Vec::with_capacity(tasks.len());

    for t in tasks {
        let view = t.view(carrier)?;
        let net = view.materialize()?;
        let trace = net.forward_traced(t.inputs)?;
        let pred = truncate_outputs(&trace.output, t.outputs)?;
        let (loss, g) = loss_and_grad(&pred, t.targets, t.kind)?;

        // Untouched carrier outputs receive zero gradient.
        let width = trace.output.cols();
        let mut padded = vec![S::zero(); trace.output.data().len()];
        for r in 0..pred.rows() {
            for (c, &v) in g.row(r).iter().enumerate() {
                padded[r * width + c] = v * t.weight;
            }
        }
        let upstream = Tensor::new(trace.output.shape().to_vec(), padded)?;
        let view_grads = net.backward_from(&trace, &upstream)?;

        let mut norm_grad = t.norm.map(NormState::zeros_like);
        view.accumulate_gradient(&view_grads, &mut grads, norm_grad.as_mut())?;

        total = total + t.weight * loss;
        task_losses.push(loss);
        norm_grads.push(norm_grad);
    }
    if !total.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("joint loss or gradient".into()));
    }
    Ok(JointGradient {
        loss: total,
        task_losses,
        carrier: grads,
        norm: norm_grads,
    })
}
