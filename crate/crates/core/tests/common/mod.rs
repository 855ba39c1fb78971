//! Test-only reference implementations. Everything here works neuron by
//! neuron from explicit connection lists and shares no code with the
//! library's kernels.
#![allow(dead_code)]

use vidrel::network::{Architecture, LayerParams, LayerSpec, NetworkSpec};
use vidrel::synthlab::{init_params, SeededRng, WeightInit};
use vidrel::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(shape, |_| lo + (hi - lo) * rng.uniform())
}

pub fn he_net(arch: Architecture, seed: u64) -> NetworkSpec {
    let params = init_params(&arch, &WeightInit::HeUniform, seed).unwrap();
    NetworkSpec::new(arch, params).unwrap()
}

/// He-initialized network whose biases are drawn uniformly from ±0.1.
pub fn he_net_with_bias(arch: Architecture, seed: u64) -> NetworkSpec {
    let mut rng = SeededRng::new(seed ^ 0xB1A5);
    let params = init_params(&arch, &WeightInit::HeUniform, seed)
        .unwrap()
        .into_iter()
        .map(|p| {
            p.map(|p| LayerParams {
                bias: p.bias.map(|b| Tensor::from_fn(b.shape(), |_| 0.2 * rng.uniform() - 0.1)),
                ..p
            })
        })
        .collect();
    NetworkSpec::new(arch, params).unwrap()
}

fn flat(shape: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Explicit connection list of a weighted layer: (input, output, weight).
pub fn connections(layer: &LayerSpec, p: &LayerParams, in_shape: &[usize], out_shape: &[usize]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    match *layer {
        LayerSpec::Conv3d { in_channels, out_channels, kernel, stride, padding, .. } => {
            for oc in 0..out_channels {
                for ot in 0..out_shape[1] {
                    for oh in 0..out_shape[2] {
                        for ow in 0..out_shape[3] {
                            let j = flat(out_shape, &[oc, ot, oh, ow]);
                            for ic in 0..in_channels {
                                for kt in 0..kernel[0] {
                                    for kh in 0..kernel[1] {
                                        for kw in 0..kernel[2] {
                                            let it = (ot * stride[0] + kt) as isize - padding[0] as isize;
                                            let ih = (oh * stride[1] + kh) as isize - padding[1] as isize;
                                            let iw = (ow * stride[2] + kw) as isize - padding[2] as isize;
                                            if it < 0 || ih < 0 || iw < 0 {
                                                continue;
                                            }
                                            let (it, ih, iw) = (it as usize, ih as usize, iw as usize);
                                            if it >= in_shape[1] || ih >= in_shape[2] || iw >= in_shape[3] {
                                                continue;
                                            }
                                            let i = flat(in_shape, &[ic, it, ih, iw]);
                                            let w = p.weight.get(&[oc, ic, kt, kh, kw]);
                                            out.push((i, j, w));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        LayerSpec::Dense { in_features, out_features, .. } => {
            for j in 0..out_features {
                for i in 0..in_features {
                    out.push((i, j, p.weight.get(&[j, i])));
                }
            }
        }
        _ => panic!("not weighted"),
    }
    out
}

/// Pool windows as lists of input indices, one per output.
pub fn windows(layer: &LayerSpec, in_shape: &[usize], out_shape: &[usize]) -> Vec<Vec<usize>> {
    let (window, stride) = match *layer {
        LayerSpec::MaxPool3d { window, stride } | LayerSpec::SumPool3d { window, stride } => (window, stride),
        _ => panic!("not a pool"),
    };
    let mut out = Vec::new();
    for c in 0..out_shape[0] {
        for ot in 0..out_shape[1] {
            for oh in 0..out_shape[2] {
                for ow in 0..out_shape[3] {
                    let mut w = Vec::new();
                    for dt in 0..window[0] {
                        for dh in 0..window[1] {
                            for dw in 0..window[2] {
                                w.push(flat(in_shape, &[c, ot * stride[0] + dt, oh * stride[1] + dh, ow * stride[2] + dw]));
                            }
                        }
                    }
                    out.push(w);
                }
            }
        }
    }
    out
}

/// Neuron-level forward pass: every activation, input first.
pub fn oracle_forward(net: &NetworkSpec, x: &[f64]) -> Vec<Vec<f64>> {
    let shapes = net.activation_shapes();
    let mut acts = vec![x.to_vec()];
    for (k, layer) in net.layers().iter().enumerate() {
        let a = acts.last().unwrap();
        let n_out: usize = shapes[k + 1].iter().product();
        let next = match layer {
            LayerSpec::Conv3d { .. } | LayerSpec::Dense { .. } => {
                let p = net.params()[k].as_ref().unwrap();
                let mut z = vec![0.0; n_out];
                if let Some(b) = &p.bias {
                    let per = n_out / b.len();
                    for (j, zj) in z.iter_mut().enumerate() {
                        *zj = b.data()[j / per];
                    }
                }
                for (i, j, w) in connections(layer, p, &shapes[k], &shapes[k + 1]) {
                    z[j] += a[i] * w;
                }
                z
            }
            LayerSpec::Relu => a.iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::Flatten => a.clone(),
            LayerSpec::MaxPool3d { .. } => windows(layer, &shapes[k], &shapes[k + 1])
                .iter()
                .map(|w| w.iter().map(|&i| a[i]).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            LayerSpec::SumPool3d { .. } => windows(layer, &shapes[k], &shapes[k + 1])
                .iter()
                .map(|w| w.iter().map(|&i| a[i]).sum())
                .collect(),
        };
        acts.push(next);
    }
    acts
}

/// Direct evaluation of the redistribution formulas: z⁺ in hidden weighted
/// layers, activation-proportional pooling, and the literal
/// `a·w − l·w⁺ − h·w⁻` numerator at the first weighted layer.
pub fn oracle_dtd(net: &NetworkSpec, x: &[f64], class: usize, low: f64, high: f64, eps: f64) -> Vec<f64> {
    let shapes = net.activation_shapes();
    let acts = oracle_forward(net, x);
    let first_weighted = net.layers().iter().position(|l| l.is_weighted()).unwrap();
    let mut rel = vec![0.0; net.class_count()];
    rel[class] = acts.last().unwrap()[class];
    for (k, layer) in net.layers().iter().enumerate().rev() {
        let a = &acts[k];
        let mut below = vec![0.0; a.len()];
        match layer {
            LayerSpec::Conv3d { .. } | LayerSpec::Dense { .. } => {
                let p = net.params()[k].as_ref().unwrap();
                let conns = connections(layer, p, &shapes[k], &shapes[k + 1]);
                let contrib = |i: usize, w: f64| {
                    if k == first_weighted {
                        a[i] * w - low * w.max(0.0) - high * w.min(0.0)
                    } else {
                        a[i] * w.max(0.0)
                    }
                };
                let mut z = vec![0.0; rel.len()];
                for &(i, j, w) in &conns {
                    z[j] += contrib(i, w);
                }
                for &(i, j, w) in &conns {
                    below[i] += contrib(i, w) / (z[j] + eps) * rel[j];
                }
            }
            LayerSpec::MaxPool3d { .. } | LayerSpec::SumPool3d { .. } => {
                for (j, w) in windows(layer, &shapes[k], &shapes[k + 1]).iter().enumerate() {
                    let z: f64 = w.iter().map(|&i| a[i]).sum();
                    for &i in w {
                        below[i] += a[i] / (z + eps) * rel[j];
                    }
                }
            }
            LayerSpec::Relu | LayerSpec::Flatten => below = rel.clone(),
        }
        rel = below;
    }
    rel
}

/// Five hand-specified bias-free networks of at most ten neurons each,
/// with an input in [0, 1] for each.
pub fn small_nets() -> Vec<(NetworkSpec, Tensor)> {
    let dense = |i, o| LayerSpec::Dense { in_features: i, out_features: o, has_bias: false };
    let conv = |ci, co, k, s, p| LayerSpec::Conv3d {
        in_channels: ci,
        out_channels: co,
        kernel: k,
        stride: s,
        padding: p,
        has_bias: false,
    };
    let archs = vec![
        Architecture { input_shape: [1, 1, 1, 3], layers: vec![dense(3, 2), LayerSpec::Relu, dense(2, 2)] },
        Architecture {
            input_shape: [1, 3, 1, 1],
            layers: vec![conv(1, 1, [2, 1, 1], [1, 1, 1], [0, 0, 0]), LayerSpec::Relu, LayerSpec::Flatten, dense(2, 1)],
        },
        Architecture {
            input_shape: [1, 4, 1, 1],
            layers: vec![
                conv(1, 1, [1, 1, 1], [1, 1, 1], [0, 0, 0]),
                LayerSpec::Relu,
                LayerSpec::SumPool3d { window: [2, 1, 1], stride: [2, 1, 1] },
                dense(2, 1),
            ],
        },
        Architecture {
            input_shape: [1, 2, 2, 1],
            layers: vec![
                conv(1, 2, [1, 1, 1], [1, 1, 1], [0, 0, 0]),
                LayerSpec::Relu,
                LayerSpec::MaxPool3d { window: [2, 2, 1], stride: [2, 2, 1] },
                dense(2, 2),
            ],
        },
        Architecture {
            input_shape: [2, 2, 1, 1],
            layers: vec![conv(2, 2, [2, 1, 1], [1, 1, 1], [1, 0, 0]), LayerSpec::Relu, dense(6, 2)],
        },
    ];
    archs
        .into_iter()
        .enumerate()
        .map(|(n, arch)| {
            let shape = arch.input_shape;
            let net = he_net(arch, 40 + n as u64);
            let x = random_tensor(&shape, 50 + n as u64, 0.0, 1.0);
            (net, x)
        })
        .collect()
}
