//! Deep Taylor decomposition (z⁺ / pooling / z^B rules) and squared-gradient
//! sensitivity maps.
//!
//! Relevance starts at the explained logit and is pushed back layer by
//! layer. Weighted layers redistribute in proportion to each input's
//! contribution to the output neuron, pooling layers in proportion to the
//! pooled activations, and ReLU/Flatten pass relevance through unchanged.
//! Biases never take part in a redistribution, and every denominator gets
//! `epsilon` added, so relevance reaching a neuron with no positive
//! contributions is dropped rather than split.

use std::fmt;

use crate::error::{invalid, Result};
use crate::network::{argmax, for_each_window, gradient, linear_forward, linear_transpose};
use crate::network::{ForwardTrace, LayerParams, LayerSpec, NetworkSpec};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Predicted,
    Class(usize),
}

impl Target {
    fn resolve(self, logits: &[f64]) -> Result<usize> {
        match self {
            Target::Predicted => Ok(argmax(logits)),
            Target::Class(c) if c < logits.len() => Ok(c),
            Target::Class(c) => invalid(format!(
                "class {c} out of range for {} classes",
                logits.len()
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceConfig {
    pub epsilon: f64,
    /// Per-channel lowest admissible pixel value.
    pub input_low: Vec<f64>,
    /// Per-channel highest admissible pixel value.
    pub input_high: Vec<f64>,
    pub target: Target,
}

impl RelevanceConfig {
    pub fn new(channels: usize, pixel_range: (f64, f64)) -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            input_low: vec![pixel_range.0; channels],
            input_high: vec![pixel_range.1; channels],
            target: Target::Predicted,
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return invalid("epsilon must be positive");
        }
        if self.input_low.len() != channels || self.input_high.len() != channels {
            return invalid(format!("pixel bounds must have one entry per channel ({channels})"));
        }
        if self.input_low.iter().zip(&self.input_high).any(|(l, h)| !(l <= h)) {
            return invalid("input_low must not exceed input_high");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dtd,
    Sensitivity,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dtd => "dtd",
            Method::Sensitivity => "sensitivity",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub scores: Tensor,
    pub method: Method,
    pub explained_class: usize,
    /// The explained logit (DTD) or the squared gradient norm (sensitivity).
    pub explained_value: f64,
    /// Set when the explained logit is not positive.
    pub warning: Option<String>,
}

/// Hidden-layer z⁺ rule for a convolution or dense layer.
pub fn zplus_backward(
    layer: &LayerSpec,
    params: &LayerParams,
    in_acts: &Tensor,
    rel_out: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    check_weighted(layer, in_acts, rel_out)?;
    if in_acts.data().iter().any(|&a| a < 0.0) {
        return invalid("z+ rule needs non-negative input activations");
    }
    let w_pos = params.weight.map(|w| w.max(0.0));
    let z = linear_forward(layer, &w_pos, None, in_acts, rel_out.shape());
    let s = stabilized_ratio(rel_out, &z, epsilon);
    let c = linear_transpose(layer, &w_pos, &s, in_acts.shape());
    Ok(hadamard(in_acts, &c))
}

/// Pooling rule: each window's relevance is shared in proportion to the
/// activations inside it. Applies to max and sum pooling alike.
pub fn pool_backward(layer: &LayerSpec, in_acts: &Tensor, rel_out: &Tensor, epsilon: f64) -> Result<Tensor> {
    let (window, stride) = match layer {
        LayerSpec::MaxPool3d { window, stride } | LayerSpec::SumPool3d { window, stride } => (*window, *stride),
        _ => return invalid("pooling rule applies to pooling layers only"),
    };
    let expected = layer.output_shape(in_acts.shape())?;
    if rel_out.shape() != expected.as_slice() {
        return invalid(format!(
            "relevance shape {:?} does not match pool output {:?}",
            rel_out.shape(),
            expected
        ));
    }
    if in_acts.data().iter().any(|&a| a < 0.0) {
        return invalid("pooling rule needs non-negative activations");
    }
    let a = in_acts.data();
    let r = rel_out.data();
    let mut out = Tensor::zeros(in_acts.shape());
    let o = out.data_mut();
    for_each_window(in_acts.shape(), window, stride, |j, idx| {
        let z: f64 = idx.iter().map(|&i| a[i]).sum();
        let s = r[j] / (z + epsilon);
        for &i in idx {
            o[i] += a[i] * s;
        }
    });
    Ok(out)
}

/// Input-layer z^B rule with per-element box bounds `low ≤ x ≤ high`.
///
/// Uses the identity `x·w − l·w⁺ − h·w⁻ = (x − l)·w⁺ + (x − h)·w⁻`, whose
/// two terms are each non-negative inside the box.
pub fn zb_backward(
    layer: &LayerSpec,
    params: &LayerParams,
    input: &Tensor,
    low: &Tensor,
    high: &Tensor,
    rel_out: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    check_weighted(layer, input, rel_out)?;
    if low.shape() != input.shape() || high.shape() != input.shape() {
        return invalid("bounds must have the input's shape");
    }
    let inside = input
        .data()
        .iter()
        .zip(low.data().iter().zip(high.data()))
        .all(|(x, (l, h))| l <= x && x <= h);
    if !inside {
        return invalid("input lies outside the [low, high] pixel box");
    }
    let w_pos = params.weight.map(|w| w.max(0.0));
    let w_neg = params.weight.map(|w| w.min(0.0));
    let above_low = Tensor::from_fn(input.shape(), |i| input.data()[i] - low.data()[i]);
    let below_high = Tensor::from_fn(input.shape(), |i| input.data()[i] - high.data()[i]);

    let z_pos = linear_forward(layer, &w_pos, None, &above_low, rel_out.shape());
    let z_neg = linear_forward(layer, &w_neg, None, &below_high, rel_out.shape());
    let z = Tensor::from_fn(rel_out.shape(), |j| z_pos.data()[j] + z_neg.data()[j]);
    let s = stabilized_ratio(rel_out, &z, epsilon);
    let c_pos = linear_transpose(layer, &w_pos, &s, input.shape());
    let c_neg = linear_transpose(layer, &w_neg, &s, input.shape());
    Ok(Tensor::from_fn(input.shape(), |i| {
        above_low.data()[i] * c_pos.data()[i] + below_high.data()[i] * c_neg.data()[i]
    }))
}

/// Full backward relevance pass for the configured target class.
pub fn dtd_explain(net: &NetworkSpec, trace: &ForwardTrace, config: &RelevanceConfig) -> Result<AttributionMap> {
    check_trace(net, trace)?;
    let channels = net.input_shape()[0];
    config.validate(channels)?;

    let logits = trace.logits();
    let class = config.target.resolve(logits)?;
    let logit = logits[class];
    if !logit.is_finite() {
        return invalid("explained logit is not finite");
    }
    let warning = (logit <= 0.0).then(|| {
        format!("explained logit {logit} is not positive; relevance is not meaningful")
    });

    let input_layer = input_layer_index(net.layers())?;
    let mut rel = Tensor::zeros(&[net.class_count()]);
    rel.data_mut()[class] = logit;

    for (k, layer) in net.layers().iter().enumerate().rev() {
        let a = trace.layer_input(k);
        rel = match layer {
            LayerSpec::Conv3d { .. } | LayerSpec::Dense { .. } => {
                let params = net.params()[k].as_ref().unwrap();
                if k == input_layer {
                    let (low, high) = box_bounds(config, trace.input().shape(), a.shape())?;
                    zb_backward(layer, params, a, &low, &high, &rel, config.epsilon)?
                } else {
                    zplus_backward(layer, params, a, &rel, config.epsilon)?
                }
            }
            LayerSpec::MaxPool3d { .. } | LayerSpec::SumPool3d { .. } => {
                pool_backward(layer, a, &rel, config.epsilon)?
            }
            LayerSpec::Relu => rel,
            LayerSpec::Flatten => rel.reshape(a.shape().to_vec())?,
        };
    }

    Ok(AttributionMap {
        scores: rel,
        method: Method::Dtd,
        explained_class: class,
        explained_value: logit,
        warning,
    })
}

/// Squared input gradient of the class logit.
pub fn sensitivity_explain(net: &NetworkSpec, input: &Tensor, class_index: usize) -> Result<AttributionMap> {
    let grad = gradient(net, input, class_index)?;
    let scores = grad.map(|g| g * g);
    let explained_value = scores.sum();
    Ok(AttributionMap {
        scores,
        method: Method::Sensitivity,
        explained_class: class_index,
        explained_value,
        warning: None,
    })
}

/// Forward pass plus explanation with the chosen method.
pub fn explain(net: &NetworkSpec, input: &Tensor, method: Method, config: &RelevanceConfig) -> Result<AttributionMap> {
    let trace = net.forward(input)?;
    explain_trace(net, &trace, method, config)
}

/// Explanation of an existing forward pass.
pub fn explain_trace(
    net: &NetworkSpec,
    trace: &ForwardTrace,
    method: Method,
    config: &RelevanceConfig,
) -> Result<AttributionMap> {
    match method {
        Method::Dtd => dtd_explain(net, trace, config),
        Method::Sensitivity => {
            let class = config.target.resolve(trace.logits())?;
            sensitivity_explain(net, trace.input(), class)
        }
    }
}

/// The first weighted layer receives the z^B rule; only reshapes may precede it.
fn input_layer_index(layers: &[LayerSpec]) -> Result<usize> {
    for (k, layer) in layers.iter().enumerate() {
        match layer {
            LayerSpec::Flatten => continue,
            l if l.is_weighted() => return Ok(k),
            _ => return invalid("the first weighted layer must see the raw input"),
        }
    }
    invalid("network has no weighted layer")
}

fn box_bounds(config: &RelevanceConfig, input_shape: &[usize], layer_shape: &[usize]) -> Result<(Tensor, Tensor)> {
    let per_channel: usize = input_shape[1..].iter().product();
    let fill = |bounds: &[f64]| {
        Tensor::from_fn(input_shape, |i| bounds[i / per_channel]).reshape(layer_shape.to_vec())
    };
    Ok((fill(&config.input_low)?, fill(&config.input_high)?))
}

fn check_weighted(layer: &LayerSpec, in_acts: &Tensor, rel_out: &Tensor) -> Result<()> {
    if !layer.is_weighted() {
        return invalid("rule applies to convolution and dense layers only");
    }
    let expected = layer.output_shape(in_acts.shape())?;
    if rel_out.shape() != expected.as_slice() {
        return invalid(format!(
            "relevance shape {:?} does not match layer output {:?}",
            rel_out.shape(),
            expected
        ));
    }
    Ok(())
}

fn check_trace(net: &NetworkSpec, trace: &ForwardTrace) -> Result<()> {
    let shapes = net.activation_shapes();
    if trace.layer_count() + 1 != shapes.len() {
        return invalid("trace length does not match the network");
    }
    for (k, shape) in shapes.iter().enumerate() {
        if trace.layer_input(k).shape() != shape.as_slice() {
            return invalid(format!("trace activation {k} has the wrong shape"));
        }
    }
    Ok(())
}

fn stabilized_ratio(rel: &Tensor, z: &Tensor, epsilon: f64) -> Tensor {
    Tensor::from_fn(rel.shape(), |j| rel.data()[j] / (z.data()[j] + epsilon))
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_fn(a.shape(), |i| a.data()[i] * b.data()[i])
}
