//! Snippet extraction at a given offset and exact rational step size, plus
//! resize/center-crop preprocessing.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const SNIPPET_LENGTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    /// (channels, N, H, W)
    pub frames: Tensor,
    pub pixel_range: (f64, f64),
    pub id: String,
    pub true_class: usize,
}

impl Video {
    pub fn new(frames: Tensor, pixel_range: (f64, f64), id: impl Into<String>, true_class: usize) -> Result<Self> {
        if frames.rank() != 4 || frames.shape()[1] == 0 {
            return invalid(format!(
                "video frames must be (channels, N ≥ 1, H, W), got {:?}",
                frames.shape()
            ));
        }
        let (lo, hi) = pixel_range;
        if frames.data().iter().any(|&v| !(lo <= v && v <= hi)) {
            return invalid(format!("pixel values outside [{lo}, {hi}]"));
        }
        Ok(Self {
            frames,
            pixel_range,
            id: id.into(),
            true_class,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// Positive rational step size, always stored in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Step {
    num: u64,
    den: u64,
}

impl Step {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return invalid(format!("step {num}/{den} must be positive"));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub const fn integer(n: u64) -> Self {
        Self { num: n, den: 1 }
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(k · step)`, exact.
    pub fn floor_mul(&self, k: u64) -> u64 {
        (k as u128 * self.num as u128 / self.den as u128) as u64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Accepts `p/q` or a bare integer; decimals are rejected.
impl FromStr for Step {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |part: &str| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidArgument(format!("step {s:?} is not of the form p/q or p")))
        };
        match s.split_once('/') {
            Some((p, q)) => Step::new(parse(p)?, parse(q)?),
            None => Step::new(parse(s)?, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnippetSpec {
    pub offset: usize,
    pub step: Step,
    pub length: usize,
}

impl SnippetSpec {
    pub fn new(offset: usize, step: Step) -> Self {
        Self {
            offset,
            step,
            length: SNIPPET_LENGTH,
        }
    }

    /// Source frame for each snippet position.
    pub fn frame_indices(&self, frame_count: usize) -> Vec<usize> {
        (0..self.length)
            .map(|k| {
                let idx = self.offset as u64 + self.step.floor_mul(k as u64);
                idx.min(frame_count as u64 - 1) as usize
            })
            .collect()
    }
}

impl Default for SnippetSpec {
    fn default() -> Self {
        Self::new(0, Step::integer(1))
    }
}

/// Frame `k` is source frame `min(offset + floor(k·step), N − 1)`.
pub fn extract_snippet(video: &Video, spec: &SnippetSpec) -> Result<Tensor> {
    let n = video.frame_count();
    if spec.offset >= n {
        return invalid(format!("offset {} beyond last frame of {n}", spec.offset));
    }
    if spec.length == 0 {
        return invalid("snippet length must be positive");
    }
    let shape = video.frames.shape();
    let (c, h, w) = (shape[0], shape[2], shape[3]);
    let plane = h * w;
    let src = video.frames.data();
    let indices = spec.frame_indices(n);
    let mut data = Vec::with_capacity(c * spec.length * plane);
    for ch in 0..c {
        for &f in &indices {
            let start = (ch * n + f) * plane;
            data.extend_from_slice(&src[start..start + plane]);
        }
    }
    Tensor::new(vec![c, spec.length, h, w], data)
}

/// Bilinear resize of every frame (half-pixel centers, edge clamping)
/// followed by a centered crop. An odd margin drops the extra row/column
/// at the bottom/right.
pub fn preprocess(frames: &Tensor, resize_to: (usize, usize), crop_to: (usize, usize)) -> Result<Tensor> {
    if frames.rank() != 4 {
        return invalid("frames must be (channels, N, H, W)");
    }
    if crop_to.0 > resize_to.0 || crop_to.1 > resize_to.1 {
        return invalid(format!("crop {crop_to:?} larger than resize {resize_to:?}"));
    }
    if resize_to.0 == 0 || resize_to.1 == 0 || crop_to.0 == 0 || crop_to.1 == 0 {
        return invalid("target sizes must be positive");
    }
    let shape = frames.shape();
    let (c, n, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (rh, rw) = resize_to;
    let (ch, cw) = crop_to;
    let top = (rh - ch) / 2;
    let left = (rw - cw) / 2;

    let ys: Vec<_> = (top..top + ch).map(|y| source_coord(y, h, rh)).collect();
    let xs: Vec<_> = (left..left + cw).map(|x| source_coord(x, w, rw)).collect();
    let src = frames.data();
    let mut out = Vec::with_capacity(c * n * ch * cw);
    for plane in src.chunks(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top_row = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
                let bottom_row = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
                out.push((1.0 - fy) * top_row + fy * bottom_row);
            }
        }
    }
    Tensor::new(vec![c, n, ch, cw], out)
}

/// Neighbouring source indices and interpolation weight for a target pixel.
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// 1/16, 1/8, …, 32: sixteen-fold repetition up to 32-fold skipping.
pub fn step_schedule() -> Vec<Step> {
    let mut out: Vec<Step> = [16, 8, 4, 2].iter().map(|&d| Step { num: 1, den: d }).collect();
    out.extend([1, 2, 4, 8, 16, 32].map(Step::integer));
    out
}

/// Offsets 0, 8, …, 256.
pub fn offset_schedule() -> Vec<usize> {
    (0..=256).step_by(8).collect()
}
