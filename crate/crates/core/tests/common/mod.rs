#![allow(dead_code)]

use num_traits::Float;
use permnet::trojan::{joint_loss_and_grad, KeySchedule, NormState, PermutedView, TaskBatch};
use permnet::nn::{Activation, Layer, LossKind, Network, Targets, Tensor, NORM_EPS};
use twofloat::TwoFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Output width a loss needs: one column for logistic, a few otherwise.
pub fn outputs_for(rng: &mut ChaCha8Rng, kind: LossKind) -> usize {
    if kind == LossKind::Logistic {
        1
    } else {
        rng.random_range(2..=5)
    }
}

/// Random MLP with widths ≤ 16, optional group norm, and non-zero biases and
/// norm affine parameters so every parameter gets exercised.
pub fn random_mlp(rng: &mut ChaCha8Rng, with_norm: bool, outputs: usize) -> Network<f64> {
    let depth = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        // Even widths, and at least four channels per normalized group: a
        // two-channel group is a smoothed sign whose transition is narrower
        // than the finite-difference step.
        let lo = if with_norm { 2 } else { 1 };
        widths.push(2 * rng.random_range(lo..=8));
    }
    widths.push(outputs);
    let narrowest = widths[1..=depth].iter().min().copied().unwrap_or(0);
    let groups = with_norm.then(|| if narrowest >= 8 { rng.random_range(1..=2) } else { 1 });
    let mut net = Network::<f64>::mlp(&widths, groups, rng.random()).unwrap();
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    net
}

pub fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

pub fn random_targets(rng: &mut ChaCha8Rng, kind: LossKind, rows: usize, outputs: usize) -> Targets<f64> {
    match kind {
        LossKind::CrossEntropy => Targets::Classes((0..rows).map(|_| rng.random_range(0..outputs)).collect()),
        LossKind::Logistic | LossKind::Binary01 => Targets::Values(
            Tensor::matrix(rows, outputs, (0..rows * outputs).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()).unwrap(),
        ),
        _ => Targets::Values(
            Tensor::matrix(rows, outputs, (0..rows * outputs).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap(),
        ),
    }
}

pub const TRAINABLE: [LossKind; 4] = [LossKind::Square, LossKind::Abs, LossKind::CrossEntropy, LossKind::Logistic];

/// Signs of every ReLU input and, for abs loss, of every residual.
pub fn kink_pattern(net: &Network<f64>, x: &Tensor<f64>, targets: &Targets<f64>, kind: LossKind, outputs: usize) -> Vec<bool> {
    let layers = net.layers();
    let mut signs = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        if matches!(l, Layer::Activation(_)) {
            let pre = Network::new(layers[..i].to_vec()).unwrap().forward(x).unwrap();
            signs.extend(pre.data().iter().map(|v| *v > 0.0));
        }
    }
    if let (LossKind::Abs, Targets::Values(y)) = (kind, targets) {
        let pred = net.forward(x).unwrap();
        for r in 0..pred.rows() {
            signs.extend(pred.row(r)[..outputs].iter().zip(y.row(r)).map(|(p, t)| p > t));
        }
    }
    signs
}

/// True when some probe within ±eps of a single parameter changes the kink pattern.
pub fn probe_crosses_kink(net: &Network<f64>, x: &Tensor<f64>, targets: &Targets<f64>, kind: LossKind, eps: f64) -> bool {
    let outputs = match targets {
        Targets::Values(y) => y.cols(),
        Targets::Classes(_) => net.output_width(),
    };
    let base = kink_pattern(net, x, targets, kind, outputs);
    let mut probe = net.clone();
    for k in 0..net.params().len() {
        for i in 0..net.params()[k].len() {
            let orig = net.params()[k][i];
            for d in [eps, -eps] {
                probe.params_mut()[k][i] = orig + d;
                if kink_pattern(&probe, x, targets, kind, outputs) != base {
                    return true;
                }
            }
            probe.params_mut()[k][i] = orig;
        }
    }
    false
}

fn lift<T: Float>(v: f64) -> T {
    T::from(v).unwrap()
}

/// Reference forward pass and mean loss, written directly from the layer
/// definitions. `layout` only supplies structure; parameter values come from
/// `params` in `Network::params` order.
pub fn reference_loss<T: Float>(layout: &[Layer<f64>], params: &[Vec<T>], x: &Tensor<f64>, targets: &Targets<f64>, kind: LossKind, outputs: usize) -> T {
    let mut rows: Vec<Vec<T>> = (0..x.rows()).map(|r| x.row(r).iter().map(|&v| lift(v)).collect()).collect();
    let mut next = 0;
    for layer in layout {
        match layer {
            Layer::Dense(d) => {
                let (w, b) = (&params[next], &params[next + 1]);
                next += 2;
                for row in rows.iter_mut() {
                    *row = (0..d.outputs)
                        .map(|o| (0..d.inputs).fold(b[o], |acc, i| acc + w[o * d.inputs + i] * row[i]))
                        .collect();
                }
            }
            Layer::GroupNorm(g) => {
                let (gain, bias) = (&params[next], &params[next + 1]);
                next += 2;
                let size = g.channels / g.groups;
                let n = lift::<T>(size as f64);
                for row in rows.iter_mut() {
                    for grp in 0..g.groups {
                        let block = grp * size..(grp + 1) * size;
                        let mean = row[block.clone()].iter().fold(T::zero(), |a, &v| a + v) / n;
                        let var = row[block.clone()].iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                        let scale = (var + lift(NORM_EPS)).sqrt();
                        for c in block {
                            row[c] = gain[c] * (row[c] - mean) / scale + bias[c];
                        }
                    }
                }
            }
            Layer::Activation(Activation::Relu) => {
                for v in rows.iter_mut().flatten() {
                    *v = v.max(T::zero());
                }
            }
            Layer::Activation(Activation::Identity) => {}
        }
    }
    let mut total = T::zero();
    for (r, row) in rows.iter().enumerate() {
        let row = &row[..outputs];
        match targets {
            Targets::Classes(c) => {
                let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
                let z = row.iter().fold(T::zero(), |a, &v| a + (v - m).exp());
                total = total - (row[c[r]] - m - z.ln());
            }
            Targets::Values(y) => {
                for (&z, &t) in row.iter().zip(y.row(r)) {
                    let t: T = lift(t);
                    total = total
                        + match kind {
                            LossKind::Square => (z - t) * (z - t),
                            LossKind::Abs => (z - t).abs(),
                            LossKind::Logistic => T::one() / (T::one() + (t * z).exp()),
                            other => panic!("no reference for {other}"),
                        };
                }
            }
        }
    }
    total / lift(rows.len() as f64)
}

fn central<F: Fn(&[Vec<TwoFloat>]) -> TwoFloat>(params: &mut [Vec<TwoFloat>], k: usize, i: usize, h: TwoFloat, f: &F) -> TwoFloat {
    let orig = params[k][i];
    params[k][i] = orig + h;
    let up = f(params);
    params[k][i] = orig - h;
    let down = f(params);
    params[k][i] = orig;
    (up - down) / (h + h)
}

/// Central differences of `f` at step `eps`, refined by one Richardson step
/// against `2·eps`, all in double-double arithmetic.
pub fn richardson_by<F: Fn(&[Vec<TwoFloat>]) -> TwoFloat>(params: &[Vec<f64>], eps: f64, f: F) -> Vec<Vec<f64>> {
    let mut p: Vec<Vec<TwoFloat>> = params.iter().map(|v| v.iter().map(|&x| TwoFloat::from(x)).collect()).collect();
    let h = TwoFloat::from(eps);
    let mut out: Vec<Vec<f64>> = params.iter().map(|v| vec![0.0; v.len()]).collect();
    for k in 0..params.len() {
        for i in 0..params[k].len() {
            let fine = central(&mut p, k, i, h, &f);
            let coarse = central(&mut p, k, i, h + h, &f);
            out[k][i] = f64::from((fine * 4.0 - coarse) / 3.0);
        }
    }
    out
}

/// Double-double finite-difference gradient of a network's mean loss.
pub fn reference_gradient(net: &Network<f64>, x: &Tensor<f64>, targets: &Targets<f64>, kind: LossKind, eps: f64) -> Vec<Vec<f64>> {
    let params: Vec<Vec<f64>> = net.params().iter().map(|p| p.to_vec()).collect();
    let outputs = net.output_width();
    richardson_by(&params, eps, |p| reference_loss(net.layers(), p, x, targets, kind, outputs))
}

pub fn max_rel_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len());
        for (&x, &y) in a.iter().zip(n) {
            worst = worst.max(permnet::nn::relative_error(x, y));
        }
    }
    worst
}

/// One task of a random joint objective.
pub struct JointTask {
    pub key: Option<Vec<u8>>,
    pub schedule: Option<KeySchedule>,
    pub norm: Option<NormState<f64>>,
    pub kind: LossKind,
    pub outputs: usize,
    pub weight: f64,
    pub x: Tensor<f64>,
    pub y: Targets<f64>,
}

pub struct JointCase {
    pub carrier: Network<f64>,
    pub tasks: Vec<JointTask>,
}

impl JointCase {
    pub fn batches(&self) -> Vec<TaskBatch<'_, f64>> {
        self.tasks
            .iter()
            .map(|t| TaskBatch {
                schedule: t.schedule.as_ref(),
                norm: t.norm.as_ref(),
                kind: t.kind,
                outputs: t.outputs,
                weight: t.weight,
                inputs: &t.x,
                targets: &t.y,
            })
            .collect()
    }

    /// Every task's materialized view, for kink screening.
    pub fn views(&self) -> Vec<Network<f64>> {
        self.batches()
            .iter()
            .map(|b| PermutedView::with_schedule(&self.carrier, b.schedule).unwrap().with_norm_state(b.norm).unwrap().materialize().unwrap())
            .collect()
    }

    pub fn crosses_kink(&self, eps: f64) -> bool {
        self.views().iter().zip(&self.tasks).any(|(v, t)| probe_crosses_kink(v, &t.x, &t.y, t.kind, eps))
    }

    /// Carrier vectors followed by each task's own norm vectors.
    pub fn flat_params(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.carrier.params().iter().map(|p| p.to_vec()).collect();
        for t in &self.tasks {
            if let Some(n) = &t.norm {
                out.extend(n.vectors().iter().map(|v| v.to_vec()));
            }
        }
        out
    }

    /// Weighted joint loss from flat parameters, gathering each keyed view
    /// as `view[i] = carrier[perm[i]]`.
    pub fn reference_loss<T: Float>(&self, flat: &[Vec<T>]) -> T {
        let specs = self.carrier.param_specs();
        let mut norm_base = specs.len();
        let mut total = T::zero();
        for t in &self.tasks {
            let mut norm_slot = norm_base;
            let view: Vec<Vec<T>> = specs
                .iter()
                .enumerate()
                .map(|(k, spec)| {
                    if spec.role.is_norm() && t.norm.is_some() {
                        norm_slot += 1;
                        return flat[norm_slot - 1].clone();
                    }
                    match t.schedule.as_ref().and_then(|s| s.permutations()[k].as_ref()) {
                        Some(p) => p.as_slice().iter().map(|&i| flat[k][i]).collect(),
                        None => flat[k].clone(),
                    }
                })
                .collect();
            norm_base = norm_slot;
            total = total + lift::<T>(t.weight) * reference_loss(self.carrier.layers(), &view, &t.x, &t.y, t.kind, t.outputs);
        }
        total
    }

    /// Analytic joint gradient laid out like [`Self::flat_params`].
    pub fn analytic(&self) -> Vec<Vec<f64>> {
        let jg = joint_loss_and_grad(&self.carrier, &self.batches()).unwrap();
        let mut out = jg.carrier.vectors;
        for n in jg.norm.into_iter().flatten() {
            out.extend(n.vectors().iter().map(|v| v.to_vec()));
        }
        out
    }

    pub fn numeric(&self, eps: f64) -> Vec<Vec<f64>> {
        richardson_by(&self.flat_params(), eps, |p| self.reference_loss(p))
    }
}

/// Random carrier with `tasks` tasks; at most one is unkeyed, keyed tasks on
/// a normalized carrier get their own perturbed norm state.
pub fn random_joint_case(rng: &mut ChaCha8Rng, tasks: usize) -> JointCase {
    let with_norm = rng.random_bool(0.5);
    let width = rng.random_range(2..=5);
    let carrier = random_mlp(rng, with_norm, width);
    let unkeyed = if rng.random_bool(0.5) { Some(rng.random_range(0..tasks)) } else { None };
    let tasks = (0..tasks)
        .map(|i| {
            let kind = TRAINABLE[rng.random_range(0..TRAINABLE.len())];
            let outputs = if kind == LossKind::Logistic { 1 } else { rng.random_range(2..=width) };
            let rows = rng.random_range(1..=5);
            let x = random_batch(rng, rows, carrier.input_width());
            let y = random_targets(rng, kind, rows, outputs);
            let key = (unkeyed != Some(i)).then(|| format!("task-{i}-{}", rng.random::<u32>()).into_bytes());
            let schedule = key.as_ref().map(|k| KeySchedule::new(&carrier, k).unwrap());
            let norm = (key.is_some() && with_norm).then(|| {
                let mut n = NormState::from_network(&carrier);
                for v in n.vectors_mut() {
                    for e in v.iter_mut() {
                        *e += rng.random_range(-0.3..0.3);
                    }
                }
                n
            });
            JointTask { key, schedule, norm, kind, outputs, weight: rng.random_range(0.5..2.0), x, y }
        })
        .collect();
    JointCase { carrier, tasks }
}

/// Worst relative error over `cases` kink-free random joint objectives.
pub fn joint_gradient_worst(seed: u64, cases: usize, max_tasks: usize, eps: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < cases {
        let n = if max_tasks <= 2 { 2 } else { rng.random_range(2..=max_tasks) };
        let case = random_joint_case(&mut rng, n);
        if case.crosses_kink(2.0 * eps) {
            continue;
        }
        worst = worst.max(max_rel_error(&case.analytic(), &case.numeric(eps)));
        checked += 1;
    }
    worst
}
