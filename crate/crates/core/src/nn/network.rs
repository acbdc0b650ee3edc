use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossKind, Targets};
use super::norm::{self, GroupNormTrace};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer. `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm<S> {
    pub channels: usize,
    pub groups: usize,
    pub gain: Vec<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Dense(Dense<S>),
    Activation(Activation),
    GroupNorm(GroupNorm<S>),
}

impl<S: Real> Dense<S> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<S>, bias: Vec<S>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::shape("dense layer dimensions must be positive"));
        }
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape(format!(
                "dense {inputs}->{outputs} with {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }
}

impl<S: Real> GroupNorm<S> {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        if channels == 0 || groups == 0 || channels % groups != 0 {
            return Err(Error::shape(format!(
                "{channels} channels are not divisible into {groups} groups"
            )));
        }
        Ok(Self {
            channels,
            groups,
            gain: vec![S::one(); channels],
            bias: vec![S::zero(); channels],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Weights,
    Bias,
    NormGain,
    NormBias,
}

impl ParamRole {
    pub fn is_norm(self) -> bool {
        matches!(self, ParamRole::NormGain | ParamRole::NormBias)
    }
}

/// Address of one trainable flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    /// Position in the layer list.
    pub layer: usize,
    /// 1-based index among parameterized layers (dense and group norm).
    pub ordinal: usize,
    pub role: ParamRole,
    pub len: usize,
}

impl ParamSpec {
    pub fn name(&self) -> String {
        let suffix = match self.role {
            ParamRole::Weights => "weights",
            ParamRole::Bias | ParamRole::NormBias => "bias",
            ParamRole::NormGain => "gain",
        };
        format!("layer{}.{}", self.ordinal, suffix)
    }
}

/// One flat vector per trainable parameter vector, ordered like
/// [`Network::param_specs`]. Used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S> {
    pub vectors: Vec<Vec<S>>,
}

pub type Gradients<S> = ParamSet<S>;

impl<S: Real> ParamSet<S> {
    pub fn zeros(specs: &[ParamSpec]) -> Self {
        Self {
            vectors: specs.iter().map(|s| vec![S::zero(); s.len]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.vectors
            .iter()
            .flatten()
            .map(|v| v.widen().abs())
            .fold(0.0, f64::max)
    }
}

/// Layer inputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    inputs: Vec<Tensor<S>>,
    norms: Vec<Option<GroupNormTrace<S>>>,
    pub output: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    layers: Vec<Layer<S>>,
    input_width: usize,
    output_width: usize,
}

impl<S: Real> Network<S> {
    pub fn new(layers: Vec<Layer<S>>) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut input_width = None;
        for (i, layer) in layers.iter().enumerate() {
            let (takes, gives) = match layer {
                Layer::Dense(d) => {
                    if d.weights.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
                        return Err(Error::shape(format!("layer {i}: dense parameter lengths")));
                    }
                    (Some(d.inputs), Some(d.outputs))
                }
                Layer::GroupNorm(g) => {
                    if g.groups == 0
                        || g.channels % g.groups != 0
                        || g.gain.len() != g.channels
                        || g.bias.len() != g.channels
                    {
                        return Err(Error::shape(format!("layer {i}: group norm parameters")));
                    }
                    (Some(g.channels), Some(g.channels))
                }
                Layer::Activation(_) => (None, None),
            };
            if let Some(t) = takes {
                match width {
                    Some(w) if w != t => {
                        return Err(Error::shape(format!(
                            "layer {i} expects width {t}, previous layer gives {w}"
                        )))
                    }
                    None => input_width = Some(t),
                    _ => {}
                }
            }
            if gives.is_some() {
                width = gives;
            }
        }
        match (input_width, width) {
            (Some(input_width), Some(output_width)) => Ok(Self {
                layers,
                input_width,
                output_width,
            }),
            _ => Err(Error::shape("network has no parameterized layer")),
        }
    }

    /// `Dense -> [GroupNorm] -> ReLU -> ... -> Dense` with He-normal weights
    /// and zero biases. `widths` lists every layer width including input and
    /// output.
    pub fn mlp(widths: &[usize], norm_groups: Option<usize>, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::shape("an MLP needs at least input and output widths"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let weights = (0..fan_in * fan_out)
                .map(|_| S::narrow(normal.sample(&mut rng)))
                .collect();
            layers.push(Layer::Dense(Dense::new(
                fan_in,
                fan_out,
                weights,
                vec![S::zero(); fan_out],
            )?));
            if i + 2 < widths.len() {
                if let Some(groups) = norm_groups {
                    layers.push(Layer::GroupNorm(GroupNorm::new(fan_out, groups)?));
                }
                layers.push(Layer::Activation(Activation::Relu));
            }
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    pub fn has_group_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::GroupNorm(_)))
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut ordinal = 0;
        for (layer, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Dense(d) => {
                    ordinal += 1;
                    specs.push(ParamSpec {
                        layer,
                        ordinal,
                        role: ParamRole::Weights,
                        len: d.weights.len(),
                    });
                    specs.push(ParamSpec {
                        layer,
                        ordinal,
                        role: ParamRole::Bias,
                        len: d.bias.len(),
                    });
                }
                Layer::GroupNorm(g) => {
                    ordinal += 1;
                    specs.push(ParamSpec {
                        layer,
                        ordinal,
                        role: ParamRole::NormGain,
                        len: g.gain.len(),
                    });
                    specs.push(ParamSpec {
                        layer,
                        ordinal,
                        role: ParamRole::NormBias,
                        len: g.bias.len(),
                    });
                }
                Layer::Activation(_) => {}
            }
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|s| s.len).sum()
    }

    pub fn params(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Dense(d) => {
                    out.push(&d.weights);
                    out.push(&d.bias);
                }
                Layer::GroupNorm(g) => {
                    out.push(&g.gain);
                    out.push(&g.bias);
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    out.push(&mut d.weights);
                    out.push(&mut d.bias);
                }
                Layer::GroupNorm(g) => {
                    out.push(&mut g.gain);
                    out.push(&mut g.bias);
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    /// Group-norm affine parameters in layer order, as `(gain, bias)` pairs.
    pub fn norm_params(&self) -> Vec<(&[S], &[S])> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::GroupNorm(g) => Some((g.gain.as_slice(), g.bias.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn norm_params_mut(&mut self) -> Vec<(&mut Vec<S>, &mut Vec<S>)> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::GroupNorm(g) => Some((&mut g.gain, &mut g.bias)),
                _ => None,
            })
            .collect()
    }

    pub fn cast<T: Real>(&self) -> Network<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::narrow(x.widen())).collect::<Vec<T>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => Layer::Dense(Dense {
                    inputs: d.inputs,
                    outputs: d.outputs,
                    weights: conv(&d.weights),
                    bias: conv(&d.bias),
                }),
                Layer::GroupNorm(g) => Layer::GroupNorm(GroupNorm {
                    channels: g.channels,
                    groups: g.groups,
                    gain: conv(&g.gain),
                    bias: conv(&g.bias),
                }),
                Layer::Activation(a) => Layer::Activation(*a),
            })
            .collect();
        Network {
            layers,
            input_width: self.input_width,
            output_width: self.output_width,
        }
    }

    pub fn forward(&self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_traced(batch).map(|t| t.output)
    }

    pub fn forward_traced(&self, batch: &Tensor<S>) -> Result<ForwardTrace<S>> {
        if batch.shape().len() != 2 || batch.cols() != self.input_width {
            return Err(Error::shape(format!(
                "batch shape {:?} for input width {}",
                batch.shape(),
                self.input_width
            )));
        }
        batch.ensure_finite("network input")?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut norms = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, trace) = match layer {
                Layer::Dense(d) => (dense_forward(d, &x)?, None),
                Layer::Activation(Activation::Identity) => (x.clone(), None),
                Layer::Activation(Activation::Relu) => (
                    x.map(|v| if v > S::zero() { v } else { S::zero() }),
                    None,
                ),
                Layer::GroupNorm(g) => {
                    let (y, t) = norm::forward_traced(&x, g.groups, &g.gain, &g.bias)?;
                    (y, Some(t))
                }
            };
            y.ensure_finite(&format!("output of layer {i}"))?;
            inputs.push(x);
            norms.push(trace);
            x = y;
        }
        Ok(ForwardTrace {
            inputs,
            norms,
            output: x,
        })
    }

    /// Parameter gradients given `d loss / d output` for a traced pass.
    pub fn backward_from(&self, trace: &ForwardTrace<S>, grad_out: &Tensor<S>) -> Result<Gradients<S>> {
        if grad_out.shape() != trace.output.shape() {
            return Err(Error::shape("upstream gradient does not match output"));
        }
        let specs = self.param_specs();
        let mut grads = ParamSet::zeros(&specs);
        let mut slot = specs.len();
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            g = match layer {
                Layer::Dense(d) => {
                    slot -= 2;
                    let (dx, dw, db) = dense_backward(d, x, &g);
                    grads.vectors[slot] = dw;
                    grads.vectors[slot + 1] = db;
                    Tensor::new(x.shape().to_vec(), dx)?
                }
                Layer::Activation(Activation::Identity) => g,
                Layer::Activation(Activation::Relu) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                        .collect();
                    Tensor::new(g.shape().to_vec(), data)?
                }
                Layer::GroupNorm(gn) => {
                    slot -= 2;
                    let t = trace.norms[i].as_ref().expect("group norm trace");
                    let (dx, dgain, dbias) = norm::backward(&g, t, gn.groups, &gn.gain);
                    grads.vectors[slot] = dgain;
                    grads.vectors[slot + 1] = dbias;
                    Tensor::new(x.shape().to_vec(), dx)?
                }
            };
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok(grads)
    }

    /// Mean loss and its gradient with respect to every trainable parameter.
    pub fn backward(
        &self,
        batch: &Tensor<S>,
        targets: &Targets<S>,
        kind: LossKind,
    ) -> Result<(S, Gradients<S>)> {
        if !kind.is_differentiable() {
            return Err(Error::NotDifferentiable("binary_01"));
        }
        let trace = self.forward_traced(batch)?;
        let (loss, grad_out) = loss_and_grad(&trace.output, targets, kind)?;
        let grads = self.backward_from(&trace, &grad_out)?;
        Ok((loss, grads))
    }
}

fn dense_forward<S: Real>(d: &Dense<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.cols() != d.inputs {
        return Err(Error::shape(format!("dense expects {} inputs, got {}", d.inputs, x.cols())));
    }
    let mut out = Vec::with_capacity(x.rows() * d.outputs);
    for r in 0..x.rows() {
        let row = x.row(r);
        for o in 0..d.outputs {
            let w = &d.weights[o * d.inputs..(o + 1) * d.inputs];
            let mut acc = d.bias[o];
            for (wi, xi) in w.iter().zip(row) {
                acc = acc + *wi * *xi;
            }
            out.push(acc);
        }
    }
    Tensor::matrix(x.rows(), d.outputs, out)
}

fn dense_backward<S: Real>(d: &Dense<S>, x: &Tensor<S>, g: &Tensor<S>) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut dx = vec![S::zero(); x.data().len()];
    let mut dw = vec![S::zero(); d.weights.len()];
    let mut db = vec![S::zero(); d.outputs];
    for r in 0..x.rows() {
        let xr = x.row(r);
        let gr = g.row(r);
        let dxr = &mut dx[r * d.inputs..(r + 1) * d.inputs];
        for (o, &go) in gr.iter().enumerate() {
            if go == S::zero() {
                continue;
            }
            db[o] = db[o] + go;
            let w = &d.weights[o * d.inputs..(o + 1) * d.inputs];
            let dwo = &mut dw[o * d.inputs..(o + 1) * d.inputs];
            for i in 0..d.inputs {
                dwo[i] = dwo[i] + go * xr[i];
                dxr[i] = dxr[i] + go * w[i];
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(w: &[f64], b: &[f64], inputs: usize) -> Network<f64> {
        Network::new(vec![Layer::Dense(
            Dense::new(inputs, b.len(), w.to_vec(), b.to_vec()).unwrap(),
        )])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = dense(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn bias_only() {
        let net = dense(&[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0], 2);
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn linear_square_gradient_by_hand() {
        let net = dense(&[1.0, 2.0], &[0.0], 2);
        let x = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let y = Targets::Values(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        let (loss, g) = net.backward(&x, &y, LossKind::Square).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(g.vectors[0], vec![2.0, 0.0]);
    }

    #[test]
    fn zero_gradient_at_exact_fit() {
        let net = dense(&[0.0], &[0.0], 1);
        let x = Tensor::matrix(1, 1, vec![5.0]).unwrap();
        let y = Targets::Values(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        let (_, g) = net.backward(&x, &y, LossKind::Square).unwrap();
        assert_eq!(g.vectors[0], vec![0.0]);
    }

    #[test]
    fn rejects_incompatible_layers_and_batches() {
        let a = Layer::Dense(Dense::<f32>::new(2, 3, vec![0.0; 6], vec![0.0; 3]).unwrap());
        let b = Layer::Dense(Dense::<f32>::new(4, 1, vec![0.0; 4], vec![0.0]).unwrap());
        assert!(Network::new(vec![a.clone(), b]).is_err());
        let net = Network::new(vec![a]).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let net = dense(&[1.0], &[0.0], 1);
        let x = Tensor::matrix(1, 1, vec![f64::NAN]).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn binary_loss_backward_rejected() {
        let net = dense(&[1.0], &[0.0], 1);
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let y = Targets::Values(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        assert!(net.backward(&x, &y, LossKind::Binary01).is_err());
    }

    #[test]
    fn param_names_count_parameterized_layers() {
        let net = Network::<f32>::mlp(&[2, 4, 3], Some(2), 0).unwrap();
        let names: Vec<String> = net.param_specs().iter().map(ParamSpec::name).collect();
        assert_eq!(
            names,
            ["layer1.weights", "layer1.bias", "layer2.gain", "layer2.bias", "layer3.weights", "layer3.bias"]
        );
        assert_eq!(net.param_count(), 8 + 4 + 4 + 4 + 12 + 3);
    }

    #[test]
    fn mlp_init_is_seeded() {
        let a = Network::<f32>::mlp(&[2, 8, 2], None, 11).unwrap();
        let b = Network::<f32>::mlp(&[2, 8, 2], None, 11).unwrap();
        let c = Network::<f32>::mlp(&[2, 8, 2], None, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
