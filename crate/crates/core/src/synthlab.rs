//! Seeded synthetic video tasks (moving bars, optional class cue patches)
//! and a plain SGD trainer for the convolutional classifiers.
//!
//! All randomness comes from xoshiro256++ seeded through SplitMix64, with
//! uniforms taken from the top 53 bits and normals from the cosine branch
//! of Box–Muller, so datasets and trained weights are reproducible from
//! their seeds alone.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::network::{argmax, backward, Architecture, LayerParams, NetworkSpec};
use crate::sampler::{extract_snippet, SnippetSpec, Video};
use crate::tensor::Tensor;

/// Portable seeded generator.
pub struct SeededRng(Xoshiro256PlusPlus);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Independent stream for a sub-task (one video, one epoch, ...).
    pub fn stream(seed: u64, stream: u64) -> Self {
        Self::new(seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub class_count: usize,
    pub frames_per_video: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Bar speeds in pixels per frame; classes cycle through
    /// orientation × direction × speed.
    pub speeds: Vec<usize>,
    pub bar_width: usize,
    /// When set, the label is carried only by a patch drawn in these frames
    /// and the bar motion is drawn independently of the label.
    pub cue_frames: Option<Vec<usize>>,
    pub noise_std: f64,
    pub pixel_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_count: 8,
            frames_per_video: 64,
            height: 24,
            width: 24,
            channels: 1,
            speeds: vec![1, 2],
            bar_width: 3,
            cue_frames: None,
            noise_std: 0.05,
            pixel_range: (0.0, 1.0),
            seed: 0,
        }
    }
}

const CUE_PATCH: usize = 4;
const CUE_CELL: usize = 6;

impl SynthConfig {
    fn motion_classes(&self) -> usize {
        4 * self.speeds.len()
    }

    fn cue_slots(&self) -> (usize, usize) {
        (self.height / CUE_CELL, self.width / CUE_CELL)
    }

    fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.frames_per_video == 0 || self.channels == 0 {
            return invalid("class count, frame count and channels must be positive");
        }
        if self.speeds.is_empty() || self.speeds.contains(&0) {
            return invalid("speeds must be a non-empty list of positive values");
        }
        if self.bar_width == 0 || self.bar_width >= self.height.min(self.width) {
            return invalid(format!(
                "bar width {} does not fit a {}x{} frame",
                self.bar_width, self.height, self.width
            ));
        }
        if !(self.noise_std >= 0.0) || !(self.pixel_range.0 < self.pixel_range.1) {
            return invalid("noise must be non-negative and the pixel range non-empty");
        }
        match &self.cue_frames {
            None if self.class_count > self.motion_classes() => invalid(format!(
                "{} classes but only {} motion patterns",
                self.class_count,
                self.motion_classes()
            )),
            Some(frames) => {
                if frames.iter().any(|&f| f >= self.frames_per_video) {
                    return invalid("cue frame index beyond video length");
                }
                let (rows, cols) = self.cue_slots();
                if self.class_count > rows * cols {
                    return invalid(format!(
                        "{} classes but only {} cue positions in a {}x{} frame",
                        self.class_count,
                        rows * cols,
                        self.height,
                        self.width
                    ));
                }
                Ok(())
            }
            None => Ok(()),
        }
    }
}

/// `count` videos with round-robin labels; video `i` depends only on
/// `(config, i)`.
pub fn generate_dataset(config: &SynthConfig, count: usize) -> Result<Vec<Video>> {
    config.validate()?;
    if count < config.class_count {
        return invalid(format!(
            "need at least {} videos for {} classes",
            config.class_count, config.class_count
        ));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let label = i % config.class_count;
            let frames = render_video(config, i as u64, label);
            Video::new(frames, config.pixel_range, format!("vid{i:05}"), label)
        })
        .collect()
}

/// Renders one video. The random stream depends on `id` only, so with cue
/// frames set two labels differ exactly in the cue frames.
pub(crate) fn render_video(config: &SynthConfig, id: u64, label: usize) -> Tensor {
    let mut rng = SeededRng::stream(config.seed, id);
    let (h, w, n, c) = (config.height, config.width, config.frames_per_video, config.channels);
    let (lo, hi) = config.pixel_range;

    let motion = match config.cue_frames {
        Some(_) => rng.below(config.motion_classes()),
        None => label,
    };
    let horizontal_motion = motion % 2 == 0;
    let forward = (motion / 2) % 2 == 0;
    let speed = config.speeds[(motion / 4) % config.speeds.len()];
    let extent = if horizontal_motion { w } else { h };
    let start = rng.below(extent);

    let mut frames = Tensor::full(&[c, n, h, w], lo);
    let data = frames.data_mut();
    for f in 0..n {
        let shift = (speed * f) % extent;
        let pos = if forward {
            (start + shift) % extent
        } else {
            (start + extent - shift) % extent
        };
        for ch in 0..c {
            let plane = &mut data[(ch * n + f) * h * w..(ch * n + f + 1) * h * w];
            for b in 0..config.bar_width {
                let line = (pos + b) % extent;
                if horizontal_motion {
                    (0..h).for_each(|y| plane[y * w + line] = hi);
                } else {
                    plane[line * w..(line + 1) * w].fill(hi);
                }
            }
        }
    }

    if let Some(cues) = &config.cue_frames {
        let (_, cols) = config.cue_slots();
        let top = (label / cols) * CUE_CELL + 1;
        let left = (label % cols) * CUE_CELL + 1;
        for &f in cues {
            for ch in 0..c {
                let plane = &mut data[(ch * n + f) * h * w..(ch * n + f + 1) * h * w];
                for y in top..top + CUE_PATCH {
                    plane[y * w + left..y * w + left + CUE_PATCH].fill(hi);
                }
            }
        }
    }

    // noise is drawn for every pixel, even when noise_std is zero
    for v in data.iter_mut() {
        let z = rng.normal();
        *v = (*v + config.noise_std * z).clamp(lo, hi);
    }
    frames
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightInit {
    /// Uniform in ±sqrt(6 / fan_in), zero biases.
    HeUniform,
    /// Uniform in ±scale per weighted layer (in layer order), zero biases.
    Uniform(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_init: WeightInit,
    /// Snippet taken from every training video.
    pub snippet: SnippetSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            weight_init: WeightInit::HeUniform,
            snippet: SnippetSpec::default(),
        }
    }
}

/// Fresh parameters for `arch`, deterministic in `seed`.
pub fn init_params(arch: &Architecture, init: &WeightInit, seed: u64) -> Result<Vec<Option<LayerParams>>> {
    let mut rng = SeededRng::new(seed);
    let mut weighted = 0;
    let mut out = Vec::with_capacity(arch.layers.len());
    for layer in &arch.layers {
        let Some((shape, fan_in)) = layer.weight_shape() else {
            out.push(None);
            continue;
        };
        let bound = match init {
            WeightInit::HeUniform => (6.0 / fan_in as f64).sqrt(),
            WeightInit::Uniform(scales) => *scales.get(weighted).ok_or_else(|| {
                Error::InvalidArgument(format!("no init scale for weighted layer {weighted}"))
            })?,
        };
        weighted += 1;
        let weight = Tensor::from_fn(&shape, |_| (2.0 * rng.uniform() - 1.0) * bound);
        let bias = layer.bias_len().map(|n| Tensor::zeros(&[n]));
        out.push(Some(LayerParams { weight, bias }));
    }
    Ok(out)
}

/// The same architecture with freshly initialized parameters.
pub fn untrained(net: &NetworkSpec, seed: u64) -> Result<NetworkSpec> {
    net.with_params(init_params(net.architecture(), &WeightInit::HeUniform, seed)?)
}

/// Mini-batch SGD on softmax cross-entropy, starting from `net`'s parameters.
pub fn train(net: &NetworkSpec, dataset: &[Video], config: &TrainConfig) -> Result<NetworkSpec> {
    train_with_progress(net, dataset, config, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean loss)` after every epoch.
pub fn train_with_progress(
    net: &NetworkSpec,
    dataset: &[Video],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<NetworkSpec> {
    if !(config.learning_rate >= 0.0) || config.epochs == 0 || config.batch_size == 0 {
        return invalid("learning rate must be ≥ 0, epochs and batch size ≥ 1");
    }
    if dataset.is_empty() {
        return invalid("training set is empty");
    }
    if let Some(v) = dataset.iter().find(|v| v.true_class >= net.class_count()) {
        return invalid(format!("video {} has label {} ≥ class count", v.id, v.true_class));
    }
    let inputs = dataset
        .iter()
        .map(|v| extract_snippet(v, &config.snippet))
        .collect::<Result<Vec<_>>>()?;

    let mut net = net.clone();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = SeededRng::stream(config.seed, epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            // gradients in parallel, summed in batch order so the result does not depend on thread count
            let per_video = batch
                .par_iter()
                .map(|&i| loss_and_grads(&net, &inputs[i], dataset[i].true_class))
                .collect::<Result<Vec<_>>>()?;
            let mut acc: Option<Vec<Option<LayerParams>>> = None;
            for (loss, grads) in per_video {
                epoch_loss += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(total) => add_params(total, &grads),
                }
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence { epoch, loss: epoch_loss });
            }
            let scale = config.learning_rate / batch.len() as f64;
            let updated = net
                .params()
                .iter()
                .zip(acc.unwrap())
                .map(|(p, g)| match (p, g) {
                    (Some(p), Some(g)) => Some(sgd_step(p, &g, scale)),
                    _ => None,
                })
                .collect();
            net = net.with_params(updated)?;
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        on_epoch(epoch, mean);
    }
    Ok(net)
}

/// Cross-entropy of the softmax over logits, plus parameter gradients.
pub fn loss_and_grads(net: &NetworkSpec, input: &Tensor, label: usize) -> Result<(f64, Vec<Option<LayerParams>>)> {
    let trace = net.forward(input)?;
    let (loss, dlogits) = softmax_cross_entropy(trace.logits(), label);
    let grads = backward(net, &trace, &dlogits, true)?;
    Ok((loss, grads.params))
}

/// Mean cross-entropy over a set of (input, label) pairs.
pub fn batch_loss(net: &NetworkSpec, inputs: &[(Tensor, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in inputs {
        total += softmax_cross_entropy(net.forward(x)?.logits(), *y).0;
    }
    Ok(total / inputs.len() as f64)
}

fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

fn add_params(total: &mut [Option<LayerParams>], other: &[Option<LayerParams>]) {
    for (t, o) in total.iter_mut().zip(other) {
        if let (Some(t), Some(o)) = (t, o) {
            add_into(&mut t.weight, &o.weight);
            if let (Some(tb), Some(ob)) = (&mut t.bias, &o.bias) {
                add_into(tb, ob);
            }
        }
    }
}

fn add_into(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

fn sgd_step(p: &LayerParams, g: &LayerParams, scale: f64) -> LayerParams {
    let step = |w: &Tensor, dw: &Tensor| Tensor::from_fn(w.shape(), |i| w.data()[i] - scale * dw.data()[i]);
    LayerParams {
        weight: step(&p.weight, &g.weight),
        bias: match (&p.bias, &g.bias) {
            (Some(b), Some(db)) => Some(step(b, db)),
            (b, _) => b.clone(),
        },
    }
}

/// Fraction of videos whose true class is the top-1 prediction on the
/// given snippet.
pub fn accuracy(net: &NetworkSpec, dataset: &[Video], snippet: &SnippetSpec) -> Result<f64> {
    if dataset.is_empty() {
        return invalid("dataset is empty");
    }
    let hits = dataset
        .par_iter()
        .map(|v| {
            let x = extract_snippet(v, snippet)?;
            Ok((argmax(net.forward(&x)?.logits()) == v.true_class) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / dataset.len() as f64)
}
