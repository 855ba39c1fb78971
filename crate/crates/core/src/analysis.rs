//! Temporal relevance profiles, the quadratic (border) and linear
//! (lookahead) least-squares models over frame shares, and dataset sweeps
//! over step size and offset.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::network::NetworkSpec;
use crate::relevance::{explain_trace, AttributionMap, Method, RelevanceConfig, Target};
use crate::sampler::{extract_snippet, SnippetSpec, Step, Video};
use crate::tensor::{reduce_over_axes, top_k_indices};

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalProfile {
    /// Relevance per frame.
    pub r: Vec<f64>,
    /// Share of the total relevance per frame; sums to one.
    pub p: Vec<f64>,
}

/// Quadratic model `curvature·t² + linear·t + intercept` over frames
/// `t = 1..=T`. Positive curvature means relevance piles up at the borders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    pub curvature: f64,
    pub linear: f64,
    pub intercept: f64,
}

impl QuadraticFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.curvature * t * t + self.linear * t + self.intercept
    }

    fn nan() -> Self {
        Self {
            curvature: f64::NAN,
            linear: f64::NAN,
            intercept: f64::NAN,
        }
    }
}

/// Linear model `slope·t + intercept`; positive slope means later frames
/// receive more relevance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.slope * t + self.intercept
    }

    fn nan() -> Self {
        Self {
            slope: f64::NAN,
            intercept: f64::NAN,
        }
    }
}

/// Frame-wise relevance (summed over channels and pixels) and its shares.
pub fn temporal_profile(map: &AttributionMap) -> Result<TemporalProfile> {
    if map.scores.rank() != 4 {
        return invalid(format!(
            "attribution map must be (channels, T, H, W), got {:?}",
            map.scores.shape()
        ));
    }
    let r = reduce_over_axes(&map.scores, 1)?;
    let total: f64 = r.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(format!(
            "total relevance {total} is not positive; shares are undefined"
        )));
    }
    let p = r.iter().map(|x| x / total).collect();
    Ok(TemporalProfile { r, p })
}

/// Element-wise mean of the share vectors, summed pairwise in list order.
pub fn mean_profile(profiles: &[TemporalProfile]) -> Result<Vec<f64>> {
    let first = profiles.first().ok_or_else(|| Error::InvalidArgument("no profiles to average".into()))?;
    let len = first.p.len();
    if profiles.iter().any(|p| p.p.len() != len) {
        return invalid("profiles have different lengths");
    }
    let n = profiles.len() as f64;
    let mut column = Vec::with_capacity(profiles.len());
    Ok((0..len)
        .map(|t| {
            column.clear();
            column.extend(profiles.iter().map(|p| p.p[t]));
            pairwise_sum(&column) / n
        })
        .collect())
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Least-squares quadratic through `(t, mean_p[t-1])`, `t = 1..=T`, via the
/// 3×3 normal equations.
pub fn fit_quadratic(mean_p: &[f64]) -> Result<QuadraticFit> {
    if mean_p.len() < 3 {
        return invalid(format!("quadratic fit needs at least 3 points, got {}", mean_p.len()));
    }
    // power sums Σ t^k for k = 0..=4 and moments Σ t^k p for k = 0..=2
    let mut s = [0.0; 5];
    let mut m = [0.0; 3];
    for (i, &p) in mean_p.iter().enumerate() {
        let t = (i + 1) as f64;
        let mut tk = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += tk;
            if k < 3 {
                m[k] += tk * p;
            }
            tk *= t;
        }
    }
    let a = [
        [s[4], s[3], s[2]],
        [s[3], s[2], s[1]],
        [s[2], s[1], s[0]],
    ];
    let [curvature, linear, intercept] = solve3(a, [m[2], m[1], m[0]])?;
    Ok(QuadraticFit {
        curvature,
        linear,
        intercept,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Numerical("singular normal matrix".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let factor = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite least-squares solution".into()));
    }
    Ok(x)
}

/// Ordinary least-squares line over `t = 1..=T`.
pub fn fit_linear(mean_p: &[f64]) -> Result<LinearFit> {
    if mean_p.len() < 2 {
        return invalid(format!("linear fit needs at least 2 points, got {}", mean_p.len()));
    }
    let n = mean_p.len() as f64;
    let (mut st, mut stt, mut sp, mut stp) = (0.0, 0.0, 0.0, 0.0);
    for (i, &p) in mean_p.iter().enumerate() {
        let t = (i + 1) as f64;
        st += t;
        stt += t * t;
        sp += p;
        stp += t * p;
    }
    let det = n * stt - st * st;
    Ok(LinearFit {
        slope: (n * stp - st * sp) / det,
        intercept: (stt * sp - st * stp) / det,
    })
}

/// Whether `true_class` is among the `k` highest logits.
pub fn top_k_hit(logits: &[f64], true_class: usize, k: usize) -> Result<bool> {
    if true_class >= logits.len() {
        return invalid(format!(
            "class {true_class} out of range for {} logits",
            logits.len()
        ));
    }
    Ok(top_k_indices(logits, k)?.contains(&true_class))
}

/// Attribution method plus its configuration; explanations always target
/// the predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct Explainer {
    pub method: Method,
    pub config: RelevanceConfig,
}

impl Explainer {
    pub fn new(method: Method, config: RelevanceConfig) -> Self {
        Self {
            method,
            config: config.with_target(Target::Predicted),
        }
    }
}

/// Everything one dataset pass at a fixed snippet setting produces.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPass {
    /// Mean share vector over non-degenerate explanations, `None` if all degenerated.
    pub mean_p: Option<Vec<f64>>,
    pub excluded: usize,
    pub hits: usize,
    pub count: usize,
}

impl DatasetPass {
    pub fn accuracy(&self) -> f64 {
        self.hits as f64 / self.count as f64
    }

    pub fn fits(&self) -> (QuadraticFit, LinearFit) {
        match &self.mean_p {
            Some(p) => (
                fit_quadratic(p).unwrap_or_else(|_| QuadraticFit::nan()),
                fit_linear(p).unwrap_or_else(|_| LinearFit::nan()),
            ),
            None => (QuadraticFit::nan(), LinearFit::nan()),
        }
    }
}

struct VideoOutcome {
    hit: bool,
    profile: Option<TemporalProfile>,
}

fn explain_video(net: &NetworkSpec, video: &Video, explainer: &Explainer, snippet: &SnippetSpec, k: usize) -> VideoOutcome {
    let Ok(x) = extract_snippet(video, snippet) else {
        return VideoOutcome { hit: false, profile: None };
    };
    let Ok(trace) = net.forward(&x) else {
        return VideoOutcome { hit: false, profile: None };
    };
    let hit = top_k_hit(trace.logits(), video.true_class, k).unwrap_or(false);
    let profile = match explain_trace(net, &trace, explainer.method, &explainer.config) {
        Ok(map) if map.warning.is_none() => temporal_profile(&map).ok(),
        _ => None,
    };
    VideoOutcome { hit, profile }
}

/// Explains every video at one snippet setting. Per-video work runs on the
/// current rayon pool; the reduction follows dataset order.
pub fn dataset_pass(
    net: &NetworkSpec,
    dataset: &[Video],
    explainer: &Explainer,
    snippet: &SnippetSpec,
    topk: usize,
) -> Result<DatasetPass> {
    if dataset.is_empty() {
        return invalid("dataset is empty");
    }
    if topk == 0 {
        return invalid("top-k must be at least 1");
    }
    let k = topk.min(net.class_count());
    let outcomes: Vec<VideoOutcome> = dataset
        .par_iter()
        .map(|v| explain_video(net, v, explainer, snippet, k))
        .collect();
    let hits = outcomes.iter().filter(|o| o.hit).count();
    let profiles: Vec<TemporalProfile> = outcomes.into_iter().filter_map(|o| o.profile).collect();
    let excluded = dataset.len() - profiles.len();
    let mean_p = if profiles.is_empty() {
        None
    } else {
        Some(mean_profile(&profiles)?)
    };
    Ok(DatasetPass {
        mean_p,
        excluded,
        hits,
        count: dataset.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: Step,
    pub quadratic: QuadraticFit,
    pub linear: LinearFit,
    pub topk_accuracy: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetRow {
    pub offset: usize,
    pub linear: LinearFit,
    pub quadratic: QuadraticFit,
    pub excluded: usize,
}

/// One row per step size at a fixed offset, in schedule order.
pub fn sweep_step(
    net: &NetworkSpec,
    dataset: &[Video],
    explainer: &Explainer,
    schedule: &[Step],
    offset: usize,
    topk: usize,
) -> Result<Vec<StepRow>> {
    schedule
        .iter()
        .map(|&step| {
            let pass = dataset_pass(net, dataset, explainer, &SnippetSpec::new(offset, step), topk)?;
            let (quadratic, linear) = pass.fits();
            Ok(StepRow {
                step,
                quadratic,
                linear,
                topk_accuracy: pass.accuracy(),
                excluded: pass.excluded,
            })
        })
        .collect()
}

/// One row per offset at a fixed step size, in schedule order.
pub fn sweep_offset(
    net: &NetworkSpec,
    dataset: &[Video],
    explainer: &Explainer,
    offsets: &[usize],
    step: Step,
) -> Result<Vec<OffsetRow>> {
    offsets
        .iter()
        .map(|&offset| {
            let pass = dataset_pass(net, dataset, explainer, &SnippetSpec::new(offset, step), 1)?;
            let (quadratic, linear) = pass.fits();
            Ok(OffsetRow {
                offset,
                linear,
                quadratic,
                excluded: pass.excluded,
            })
        })
        .collect()
}

/// Step with the strictly highest accuracy, `None` when the maximum is shared.
pub fn best_step(rows: &[StepRow]) -> Option<Step> {
    let max = rows.iter().map(|r| r.topk_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let mut winners = rows.iter().filter(|r| r.topk_accuracy == max);
    let first = winners.next()?;
    winners.next().is_none().then_some(first.step)
}
