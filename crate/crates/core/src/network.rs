//! Sequential 3D convolutional classifiers: architecture description,
//! forward passes that keep every activation, and reverse-mode gradients.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{top_k_indices, Tensor};

/// Extents along (time, height, width).
pub type Triple = [usize; 3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: Triple,
        stride: Triple,
        padding: Triple,
        has_bias: bool,
    },
    Relu,
    MaxPool3d {
        window: Triple,
        stride: Triple,
    },
    SumPool3d {
        window: Triple,
        stride: Triple,
    },
    Flatten,
    /// Fully connected layer over the flattened input.
    Dense {
        in_features: usize,
        out_features: usize,
        has_bias: bool,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: Triple, padding: Triple) -> Self {
        LayerSpec::Conv3d {
            in_channels,
            out_channels,
            kernel,
            stride: [1, 1, 1],
            padding,
            has_bias: true,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
            has_bias: true,
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Conv3d { .. } | LayerSpec::Dense { .. })
    }

    pub fn has_bias(&self) -> bool {
        match self {
            LayerSpec::Conv3d { has_bias, .. } | LayerSpec::Dense { has_bias, .. } => *has_bias,
            _ => false,
        }
    }

    /// Copy of the layer with its bias flag cleared (no-op for unweighted layers).
    pub fn without_bias(&self) -> Self {
        let mut out = self.clone();
        match &mut out {
            LayerSpec::Conv3d { has_bias, .. } | LayerSpec::Dense { has_bias, .. } => {
                *has_bias = false
            }
            _ => {}
        }
        out
    }

    /// Weight tensor shape and fan-in, for weighted layers.
    pub fn weight_shape(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel[0], kernel[1], kernel[2]],
                in_channels * kernel.iter().product::<usize>(),
            )),
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => Some((vec![out_features, in_features], in_features)),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv3d {
                out_channels,
                has_bias: true,
                ..
            } => Some(out_channels),
            LayerSpec::Dense {
                out_features,
                has_bias: true,
                ..
            } => Some(out_features),
            _ => None,
        }
    }

    /// Output shape produced from `input`, validating the layer against it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let [c, t, h, w] = volume_shape(input)?;
                if c != in_channels {
                    return invalid(format!(
                        "conv expects {in_channels} input channels, got {c}"
                    ));
                }
                if out_channels == 0 {
                    return invalid("conv needs at least one output channel");
                }
                let mut out = vec![out_channels];
                for (axis, n) in [t, h, w].into_iter().enumerate() {
                    out.push(window_extent(n, kernel[axis], stride[axis], padding[axis])?);
                }
                Ok(out)
            }
            LayerSpec::MaxPool3d { window, stride } | LayerSpec::SumPool3d { window, stride } => {
                let [c, t, h, w] = volume_shape(input)?;
                let mut out = vec![c];
                for (axis, n) in [t, h, w].into_iter().enumerate() {
                    if stride[axis] > window[axis] {
                        return invalid(format!(
                            "pool stride {:?} exceeds window {:?}",
                            stride, window
                        ));
                    }
                    out.push(window_extent(n, window[axis], stride[axis], 0)?);
                }
                Ok(out)
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                let n: usize = input.iter().product();
                if n != in_features {
                    return invalid(format!(
                        "dense expects {in_features} inputs, got shape {input:?}"
                    ));
                }
                if out_features == 0 {
                    return invalid("dense needs at least one output");
                }
                Ok(vec![out_features])
            }
        }
    }
}

fn volume_shape(shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[c, t, h, w] => Ok([c, t, h, w]),
        _ => invalid(format!("expected (channels, time, height, width), got {shape:?}")),
    }
}

fn window_extent(n: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if k == 0 || s == 0 {
        return invalid("kernel, window and stride extents must be positive");
    }
    let padded = n + 2 * p;
    if padded < k {
        return invalid(format!(
            "window {k} larger than padded extent {padded}"
        ));
    }
    Ok((padded - k) / s + 1)
}

/// Weight and optional bias of a weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Input shape plus ordered layers, without parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: [usize; 4],
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Desk-scale C3D-like preset: two conv/pool stages (the first pool
    /// keeps time), then two dense layers. Input is 1×16×24×24.
    pub fn mini_c3d(class_count: usize, has_bias: bool) -> Self {
        let layers = vec![
            LayerSpec::conv(1, 8, [3, 3, 3], [1, 1, 1]),
            LayerSpec::Relu,
            LayerSpec::MaxPool3d {
                window: [1, 2, 2],
                stride: [1, 2, 2],
            },
            LayerSpec::conv(8, 16, [3, 3, 3], [1, 1, 1]),
            LayerSpec::Relu,
            LayerSpec::MaxPool3d {
                window: [2, 2, 2],
                stride: [2, 2, 2],
            },
            LayerSpec::Flatten,
            LayerSpec::dense(16 * 8 * 6 * 6, 64),
            LayerSpec::Relu,
            LayerSpec::dense(64, class_count),
        ];
        let layers = if has_bias {
            layers
        } else {
            layers.iter().map(LayerSpec::without_bias).collect()
        };
        Self {
            input_shape: [1, 16, 24, 24],
            layers,
        }
    }

    /// Shapes of every activation: entry 0 is the input, entry k+1 the
    /// output of layer k.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    arch: Architecture,
    params: Vec<Option<LayerParams>>,
    shapes: Vec<Vec<usize>>,
    class_count: usize,
}

impl NetworkSpec {
    /// Validates shape chaining and parameter shapes. `params` has one
    /// entry per layer, `Some` exactly for weighted layers.
    pub fn new(arch: Architecture, params: Vec<Option<LayerParams>>) -> Result<Self> {
        if arch.input_shape.contains(&0) {
            return invalid("input extents must be positive");
        }
        let shapes = arch.activation_shapes()?;
        let class_count = match arch.layers.last() {
            Some(LayerSpec::Dense { out_features, .. }) => *out_features,
            _ => return invalid("final layer must be dense"),
        };
        if params.len() != arch.layers.len() {
            return invalid(format!(
                "{} parameter slots for {} layers",
                params.len(),
                arch.layers.len()
            ));
        }
        for (k, (layer, p)) in arch.layers.iter().zip(&params).enumerate() {
            match (layer.weight_shape(), p) {
                (None, None) => {}
                (Some((wshape, _)), Some(p)) => {
                    if p.weight.shape() != wshape.as_slice() {
                        return invalid(format!(
                            "layer {k}: weight shape {:?}, expected {:?}",
                            p.weight.shape(),
                            wshape
                        ));
                    }
                    match (layer.bias_len(), &p.bias) {
                        (None, None) => {}
                        (Some(n), Some(b)) if b.shape() == [n] => {}
                        _ => return invalid(format!("layer {k}: bias does not match layer")),
                    }
                }
                _ => return invalid(format!("layer {k}: parameters do not match layer kind")),
            }
        }
        Ok(Self {
            arch,
            params,
            shapes,
            class_count,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_shape(&self) -> [usize; 4] {
        self.arch.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.arch.layers
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn activation_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Same architecture with replacement parameters.
    pub fn with_params(&self, params: Vec<Option<LayerParams>>) -> Result<Self> {
        Self::new(self.arch.clone(), params)
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardTrace> {
        forward(self, input)
    }
}

/// All activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn layer_count(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn layer_input(&self, k: usize) -> &Tensor {
        &self.activations[k]
    }

    pub fn layer_output(&self, k: usize) -> &Tensor {
        &self.activations[k + 1]
    }

    pub fn logits(&self) -> &[f64] {
        self.activations.last().unwrap().data()
    }
}

pub fn forward(net: &NetworkSpec, input: &Tensor) -> Result<ForwardTrace> {
    if input.shape() != net.arch.input_shape {
        return invalid(format!(
            "input shape {:?} does not match network input {:?}",
            input.shape(),
            net.arch.input_shape
        ));
    }
    let mut activations = Vec::with_capacity(net.arch.layers.len() + 1);
    activations.push(input.clone());
    for (k, layer) in net.arch.layers.iter().enumerate() {
        let x = &activations[k];
        let out_shape = &net.shapes[k + 1];
        let y = match layer {
            LayerSpec::Conv3d { .. } | LayerSpec::Dense { .. } => {
                let p = net.params[k].as_ref().unwrap();
                linear_forward(layer, &p.weight, p.bias.as_ref(), x, out_shape)
            }
            LayerSpec::Relu => x.map(|v| v.max(0.0)),
            LayerSpec::MaxPool3d { window, stride } => pool_forward(x, out_shape, *window, *stride, true),
            LayerSpec::SumPool3d { window, stride } => pool_forward(x, out_shape, *window, *stride, false),
            LayerSpec::Flatten => Tensor::new(out_shape.clone(), x.data().to_vec())?,
        };
        activations.push(y);
    }
    Ok(ForwardTrace { activations })
}

/// Logits and the arg-max class (lower index on ties).
pub fn predict(net: &NetworkSpec, input: &Tensor) -> Result<(Vec<f64>, usize)> {
    let trace = forward(net, input)?;
    let logits = trace.logits().to_vec();
    let class = argmax(&logits);
    Ok((logits, class))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// ∂ logit[class_index] / ∂ input.
pub fn gradient(net: &NetworkSpec, input: &Tensor, class_index: usize) -> Result<Tensor> {
    if class_index >= net.class_count {
        return invalid(format!(
            "class {class_index} out of range for {} classes",
            net.class_count
        ));
    }
    let trace = forward(net, input)?;
    let mut seed = vec![0.0; net.class_count];
    seed[class_index] = 1.0;
    Ok(backward(net, &trace, &seed, false)?.input)
}

pub struct Gradients {
    pub input: Tensor,
    /// Parameter gradients per layer; empty unless requested.
    pub params: Vec<Option<LayerParams>>,
}

/// Reverse-mode pass from a logit-space seed vector.
pub fn backward(
    net: &NetworkSpec,
    trace: &ForwardTrace,
    grad_logits: &[f64],
    with_params: bool,
) -> Result<Gradients> {
    if trace.layer_count() != net.arch.layers.len() {
        return invalid("trace does not belong to this network");
    }
    if grad_logits.len() != net.class_count {
        return invalid("seed length differs from class count");
    }
    let mut grad = Tensor::new(vec![net.class_count], grad_logits.to_vec())?;
    let mut params: Vec<Option<LayerParams>> = Vec::new();
    if with_params {
        params.resize(net.arch.layers.len(), None);
    }
    for (k, layer) in net.arch.layers.iter().enumerate().rev() {
        let x = trace.layer_input(k);
        grad = match layer {
            LayerSpec::Conv3d { .. } | LayerSpec::Dense { .. } => {
                let p = net.params[k].as_ref().unwrap();
                if with_params {
                    let gw = linear_weight_grad(layer, x, &grad, p.weight.shape());
                    let gb = p.bias.as_ref().map(|b| bias_grad(&grad, b.len()));
                    params[k] = Some(LayerParams {
                        weight: gw,
                        bias: gb,
                    });
                }
                linear_transpose(layer, &p.weight, &grad, x.shape())
            }
            LayerSpec::Relu => {
                let mut g = grad.into_data();
                for (gi, xi) in g.iter_mut().zip(x.data()) {
                    if *xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
                Tensor::new(x.shape().to_vec(), g)?
            }
            LayerSpec::MaxPool3d { window, stride } => {
                maxpool_backward(x, &grad, *window, *stride)
            }
            LayerSpec::SumPool3d { window, stride } => {
                pool_spread(x.shape(), &grad, *window, *stride, |_, g| g)
            }
            LayerSpec::Flatten => grad.reshape(x.shape().to_vec())?,
        };
    }
    Ok(Gradients {
        input: grad,
        params,
    })
}

// ---------------------------------------------------------------------------
// kernels

/// Output-index range whose input coordinate `o*s + k - p` lands in `[0, n_in)`.
fn valid_range(n_in: usize, n_out: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let top = n_in as isize - 1 + p as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / s + 1).min(n_out);
    (lo.min(hi), hi)
}

struct ConvGeom {
    cin: usize,
    cout: usize,
    ins: [usize; 3],
    outs: [usize; 3],
    kernel: Triple,
    stride: Triple,
    pad: Triple,
}

impl ConvGeom {
    fn new(layer: &LayerSpec, in_shape: &[usize], out_shape: &[usize]) -> Self {
        match *layer {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => Self {
                cin: in_channels,
                cout: out_channels,
                ins: [in_shape[1], in_shape[2], in_shape[3]],
                outs: [out_shape[1], out_shape[2], out_shape[3]],
                kernel,
                stride,
                pad: padding,
            },
            _ => unreachable!("not a convolution"),
        }
    }

    /// Calls `f(weight_index, out_row_base, in_row_base, ow_range, kw)` for
    /// every (oc, ic, kt, kh, kw, ot, oh) pair with an in-bounds input row.
    #[inline]
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, (usize, usize), usize)) {
        let [ti, hi, wi] = self.ins;
        let [to, ho, wo] = self.outs;
        let [kt_n, kh_n, kw_n] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad;
        for oc in 0..self.cout {
            for ic in 0..self.cin {
                for kt in 0..kt_n {
                    let (t0, t1) = valid_range(ti, to, kt, st, pt);
                    for kh in 0..kh_n {
                        let (h0, h1) = valid_range(hi, ho, kh, sh, ph);
                        for kw in 0..kw_n {
                            let wr = valid_range(wi, wo, kw, sw, pw);
                            let widx = (((oc * self.cin + ic) * kt_n + kt) * kh_n + kh) * kw_n + kw;
                            for ot in t0..t1 {
                                let it = ot * st + kt - pt;
                                for oh in h0..h1 {
                                    let ih = oh * sh + kh - ph;
                                    let out_base = ((oc * to + ot) * ho + oh) * wo;
                                    let in_base = ((ic * ti + it) * hi + ih) * wi;
                                    f(widx, out_base, in_base, wr, kw);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Affine map of a weighted layer with an arbitrary weight tensor
/// (relevance rules reuse this with clipped weights).
pub(crate) fn linear_forward(
    layer: &LayerSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
    x: &Tensor,
    out_shape: &[usize],
) -> Tensor {
    match layer {
        LayerSpec::Conv3d { .. } => {
            let g = ConvGeom::new(layer, x.shape(), out_shape);
            let mut out = Tensor::zeros(out_shape);
            let per_channel: usize = g.outs.iter().product();
            if let Some(b) = bias {
                for (oc, chunk) in out.data_mut().chunks_mut(per_channel).enumerate() {
                    chunk.fill(b.data()[oc]);
                }
            }
            let w = weight.data();
            let xin = x.data();
            let (sw, pw) = (g.stride[2], g.pad[2]);
            let o = out.data_mut();
            g.for_each_row(|widx, ob, ib, (w0, w1), kw| {
                let wv = w[widx];
                if wv == 0.0 {
                    return;
                }
                for ow in w0..w1 {
                    o[ob + ow] += wv * xin[ib + ow * sw + kw - pw];
                }
            });
            out
        }
        LayerSpec::Dense {
            in_features,
            out_features,
            ..
        } => {
            let w = weight.data();
            let xin = x.data();
            let data = (0..*out_features)
                .map(|j| {
                    let row = &w[j * in_features..(j + 1) * in_features];
                    let s: f64 = row.iter().zip(xin).map(|(a, b)| a * b).sum();
                    s + bias.map_or(0.0, |b| b.data()[j])
                })
                .collect();
            Tensor::new(vec![*out_features], data).unwrap()
        }
        _ => unreachable!("not a weighted layer"),
    }
}

/// Transposed map: `out[i] = Σ_j w[j,i] * g[j]`, shaped like the layer input.
pub(crate) fn linear_transpose(
    layer: &LayerSpec,
    weight: &Tensor,
    g: &Tensor,
    in_shape: &[usize],
) -> Tensor {
    match layer {
        LayerSpec::Conv3d { .. } => {
            let geom = ConvGeom::new(layer, in_shape, g.shape());
            let mut out = Tensor::zeros(in_shape);
            let w = weight.data();
            let gd = g.data();
            let (sw, pw) = (geom.stride[2], geom.pad[2]);
            let o = out.data_mut();
            geom.for_each_row(|widx, ob, ib, (w0, w1), kw| {
                let wv = w[widx];
                if wv == 0.0 {
                    return;
                }
                for ow in w0..w1 {
                    o[ib + ow * sw + kw - pw] += wv * gd[ob + ow];
                }
            });
            out
        }
        LayerSpec::Dense {
            in_features,
            out_features,
            ..
        } => {
            let w = weight.data();
            let mut out = vec![0.0; *in_features];
            for j in 0..*out_features {
                let gj = g.data()[j];
                if gj == 0.0 {
                    continue;
                }
                let row = &w[j * in_features..(j + 1) * in_features];
                for (o, wv) in out.iter_mut().zip(row) {
                    *o += wv * gj;
                }
            }
            Tensor::new(in_shape.to_vec(), out).unwrap()
        }
        _ => unreachable!("not a weighted layer"),
    }
}

fn linear_weight_grad(layer: &LayerSpec, x: &Tensor, g: &Tensor, wshape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(wshape);
    match layer {
        LayerSpec::Conv3d { .. } => {
            let geom = ConvGeom::new(layer, x.shape(), g.shape());
            let xin = x.data();
            let gd = g.data();
            let (sw, pw) = (geom.stride[2], geom.pad[2]);
            let o = out.data_mut();
            geom.for_each_row(|widx, ob, ib, (w0, w1), kw| {
                let mut acc = 0.0;
                for ow in w0..w1 {
                    acc += gd[ob + ow] * xin[ib + ow * sw + kw - pw];
                }
                o[widx] += acc;
            });
        }
        LayerSpec::Dense { in_features, .. } => {
            let xin = x.data();
            let o = out.data_mut();
            for (j, gj) in g.data().iter().enumerate() {
                if *gj == 0.0 {
                    continue;
                }
                let row = &mut o[j * in_features..(j + 1) * in_features];
                for (r, xv) in row.iter_mut().zip(xin) {
                    *r += gj * xv;
                }
            }
        }
        _ => unreachable!("not a weighted layer"),
    }
    out
}

fn bias_grad(g: &Tensor, channels: usize) -> Tensor {
    let per = g.len() / channels;
    let data = g.data().chunks(per).map(|c| c.iter().sum()).collect();
    Tensor::new(vec![channels], data).unwrap()
}

/// Visits every pooling window: `f(out_index, input_offsets_in_row_major_order)`.
pub(crate) fn for_each_window(
    in_shape: &[usize],
    window: Triple,
    stride: Triple,
    mut f: impl FnMut(usize, &[usize]),
) {
    let [c, t, h, w] = [in_shape[0], in_shape[1], in_shape[2], in_shape[3]];
    let to = (t - window[0]) / stride[0] + 1;
    let ho = (h - window[1]) / stride[1] + 1;
    let wo = (w - window[2]) / stride[2] + 1;
    let mut idx = Vec::with_capacity(window.iter().product());
    let mut out = 0;
    for ch in 0..c {
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    idx.clear();
                    for dt in 0..window[0] {
                        let it = ot * stride[0] + dt;
                        for dh in 0..window[1] {
                            let ih = oh * stride[1] + dh;
                            let base = ((ch * t + it) * h + ih) * w + ow * stride[2];
                            idx.extend(base..base + window[2]);
                        }
                    }
                    f(out, &idx);
                    out += 1;
                }
            }
        }
    }
}

fn pool_forward(x: &Tensor, out_shape: &[usize], window: Triple, stride: Triple, max: bool) -> Tensor {
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let o = out.data_mut();
    for_each_window(x.shape(), window, stride, |j, idx| {
        o[j] = if max {
            idx.iter().fold(f64::NEG_INFINITY, |m, &i| if xd[i] > m { xd[i] } else { m })
        } else {
            idx.iter().map(|&i| xd[i]).sum()
        };
    });
    out
}

/// Spreads each output gradient over its window, weighting element `i` by
/// `share(i, g_j)`; overlapping windows accumulate.
fn pool_spread(
    in_shape: &[usize],
    g: &Tensor,
    window: Triple,
    stride: Triple,
    share: impl Fn(usize, f64) -> f64,
) -> Tensor {
    let mut out = Tensor::zeros(in_shape);
    let gd = g.data();
    let o = out.data_mut();
    for_each_window(in_shape, window, stride, |j, idx| {
        for &i in idx {
            o[i] += share(i, gd[j]);
        }
    });
    out
}

fn maxpool_backward(x: &Tensor, g: &Tensor, window: Triple, stride: Triple) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let gd = g.data();
    let o = out.data_mut();
    for_each_window(x.shape(), window, stride, |j, idx| {
        let mut best = idx[0];
        for &i in &idx[1..] {
            if xd[i] > xd[best] {
                best = i;
            }
        }
        o[best] += gd[j];
    });
    out
}

/// Predicted class via the shared top-k routine; equals [`argmax`].
pub fn predicted_class(logits: &[f64]) -> Result<usize> {
    Ok(top_k_indices(logits, 1)?[0])
}
