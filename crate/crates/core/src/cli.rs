//! Command-line front end. Every subcommand prints its resolved
//! configuration (lines starting with `#`) before any results.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{best_step, dataset_pass, fit_linear, fit_quadratic, sweep_offset, sweep_step, temporal_profile, Explainer};
use crate::error::Error;
use crate::network::{Architecture, NetworkSpec};
use crate::persist::{self, fmt_f64};
use crate::relevance::{explain_trace, Method, RelevanceConfig, Target};
use crate::sampler::{extract_snippet, offset_schedule, step_schedule, SnippetSpec, Step, Video};
use crate::synthlab::{generate_dataset, init_params, train_with_progress, SynthConfig, TrainConfig, WeightInit};

#[derive(Debug, Parser)]
#[command(name = "vidrel", version, about = "Relevance analysis for snippet-based video classifiers")]
struct Cli {
    /// Worker threads for per-video stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic moving-bar dataset.
    GenData(GenDataArgs),
    /// Train the mini-C3D network on a dataset.
    Train(TrainArgs),
    /// Explain one video snippet.
    Explain(ExplainArgs),
    /// Mean relevance profile and fitted border/lookahead models over a dataset.
    Analyze(AnalyzeArgs),
    /// Fits and top-k accuracy for each step size.
    SweepStep(SweepStepArgs),
    /// Fits for each snippet offset.
    SweepOffset(SweepOffsetArgs),
    /// Top-k accuracy on a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelData {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Dtd,
    Sensitivity,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dtd => Method::Dtd,
            MethodArg::Sensitivity => Method::Sensitivity,
        }
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    /// Frame height and width.
    #[arg(long, default_value_t = 24)]
    size: usize,
    /// Comma-separated bar speeds in pixels per frame.
    #[arg(long, default_value = "1,2")]
    speeds: String,
    #[arg(long, default_value_t = 3)]
    bar_width: usize,
    /// Comma-separated frame indices carrying the class cue.
    #[arg(long)]
    cue_frames: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value = "1")]
    step: String,
    /// Train the variant without biases.
    #[arg(long)]
    bias_free: bool,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    io: ModelData,
    /// Video id, or its position in the dataset.
    #[arg(long)]
    video_id: String,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value = "1")]
    step: String,
    #[arg(long, value_enum, default_value = "dtd")]
    method: MethodArg,
    /// `auto` explains the predicted class.
    #[arg(long, default_value = "auto")]
    class: String,
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    io: ModelData,
    #[arg(long, value_enum, default_value = "dtd")]
    method: MethodArg,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value = "1")]
    step: String,
}

#[derive(Debug, Args)]
struct SweepStepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    io: ModelData,
    #[arg(long, value_enum, default_value = "dtd")]
    method: MethodArg,
    /// `default` or a comma list of steps such as `1/2,1,2,4`.
    #[arg(long, default_value = "default")]
    schedule: String,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value_t = 5)]
    topk: usize,
}

#[derive(Debug, Args)]
struct SweepOffsetArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    io: ModelData,
    #[arg(long, value_enum, default_value = "dtd")]
    method: MethodArg,
    /// `default` (0, 8, …, 256) or a comma list of offsets.
    #[arg(long, default_value = "default")]
    schedule: String,
    #[arg(long, default_value = "1")]
    step: String,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    io: ModelData,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value = "1")]
    step: String,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs the command line; returns the process exit status (0 ok, 1 usage
/// error, 2 data or model error).
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if informational {
                let _ = write!(out, "{text}");
                return 0;
            }
            let _ = write!(err, "{text}");
            return 1;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker pool: {e}");
            return 2;
        }
    };
    let mut buffer = Vec::new();
    let result = pool.install(|| dispatch(&cli, &mut buffer));
    let _ = out.write_all(&buffer);
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "usage error: {msg}");
            1
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn dispatch(cli: &Cli, out: &mut Vec<u8>) -> CliResult<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Explain(a) => explain_cmd(a, cli.jobs, out),
        Command::Analyze(a) => analyze_cmd(a, cli.jobs, out),
        Command::SweepStep(a) => sweep_step_cmd(a, cli.jobs, out),
        Command::SweepOffset(a) => sweep_offset_cmd(a, cli.jobs, out),
        Command::Eval(a) => eval_cmd(a, cli.jobs, out),
    }
}

fn parse_step(s: &str) -> CliResult<Step> {
    s.parse().map_err(|_| Failure::Usage(format!("--step {s:?}: expected p/q or an integer")))
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("{flag}: cannot parse {part:?}")))
        })
        .collect()
}

fn require_out(common: &Common, cmd: &str) -> CliResult<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| Failure::Usage(format!("{cmd} needs --out")))
}

fn emit(out: &mut Vec<u8>, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|e| {
        Failure::Run(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })
    })
}

fn config_block(out: &mut Vec<u8>, cmd: &str, items: &[(&str, String)]) -> CliResult<()> {
    let mut text = format!("# command = {cmd}\n");
    for (k, v) in items {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    emit(out, &text)
}

fn path_str(p: &std::path::Path) -> String {
    p.display().to_string()
}

fn load_inputs(io: &ModelData) -> CliResult<(NetworkSpec, Vec<Video>)> {
    Ok((persist::load_network(&io.net)?, persist::load_dataset(&io.data)?))
}

fn explainer_for(net: &NetworkSpec, data: &[Video], method: Method) -> CliResult<Explainer> {
    let range = data.first().map_or((0.0, 1.0), |v| v.pixel_range);
    Ok(Explainer::new(method, RelevanceConfig::new(net.input_shape()[0], range)))
}

fn gen_data(a: &GenDataArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let path = require_out(&a.common, "gen-data")?;
    let cue_frames = match &a.cue_frames {
        Some(s) => Some(parse_list::<usize>("--cue-frames", s)?),
        None => None,
    };
    let config = SynthConfig {
        class_count: a.classes,
        frames_per_video: a.frames,
        height: a.size,
        width: a.size,
        channels: 1,
        speeds: parse_list("--speeds", &a.speeds)?,
        bar_width: a.bar_width,
        cue_frames,
        noise_std: a.noise,
        pixel_range: (0.0, 1.0),
        seed: a.common.seed,
    };
    config_block(
        out,
        "gen-data",
        &[
            ("seed", config.seed.to_string()),
            ("out", path_str(&path)),
            ("count", a.count.to_string()),
            ("classes", config.class_count.to_string()),
            ("frames", config.frames_per_video.to_string()),
            ("size", format!("{}x{}", config.height, config.width)),
            ("speeds", format!("{:?}", config.speeds)),
            ("bar_width", config.bar_width.to_string()),
            ("cue_frames", format!("{:?}", config.cue_frames)),
            ("noise_std", config.noise_std.to_string()),
        ],
    )?;
    let videos = generate_dataset(&config, a.count)?;
    persist::save_dataset(&path, &videos)?;
    emit(out, &format!("wrote {} videos\n", videos.len()))
}

fn train_cmd(a: &TrainArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let path = require_out(&a.common, "train")?;
    let step = parse_step(&a.step)?;
    let data = persist::load_dataset(&a.data)?;
    let classes = data.iter().map(|v| v.true_class).max().map_or(1, |c| c + 1);
    let arch = Architecture::mini_c3d(classes, !a.bias_free);
    let config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.common.seed,
        weight_init: WeightInit::HeUniform,
        snippet: SnippetSpec::new(a.offset, step),
    };
    config_block(
        out,
        "train",
        &[
            ("seed", config.seed.to_string()),
            ("data", path_str(&a.data)),
            ("out", path_str(&path)),
            ("architecture", "mini-c3d".into()),
            ("classes", classes.to_string()),
            ("bias", (!a.bias_free).to_string()),
            ("epochs", config.epochs.to_string()),
            ("learning_rate", config.learning_rate.to_string()),
            ("batch_size", config.batch_size.to_string()),
            ("offset", a.offset.to_string()),
            ("step", step.to_string()),
        ],
    )?;
    let start = NetworkSpec::new(arch.clone(), init_params(&arch, &config.weight_init, config.seed)?)?;
    let mut log = String::new();
    let net = train_with_progress(&start, &data, &config, |epoch, loss| {
        log.push_str(&format!("epoch {} loss {}\n", epoch + 1, fmt_f64(loss)));
    })?;
    emit(out, &log)?;
    persist::save_network(&path, &net)?;
    emit(out, "wrote network\n")
}

fn find_video<'a>(data: &'a [Video], id: &str) -> CliResult<&'a Video> {
    if let Some(v) = data.iter().find(|v| v.id == id) {
        return Ok(v);
    }
    id.parse::<usize>()
        .ok()
        .and_then(|i| data.get(i))
        .ok_or_else(|| Failure::Run(Error::InvalidArgument(format!("no video with id {id:?}"))))
}

fn explain_cmd(a: &ExplainArgs, jobs: usize, out: &mut Vec<u8>) -> CliResult<()> {
    let step = parse_step(&a.step)?;
    let target = match a.class.as_str() {
        "auto" => Target::Predicted,
        s => Target::Class(
            s.parse()
                .map_err(|_| Failure::Usage(format!("--class {s:?}: expected auto or an index")))?,
        ),
    };
    let (net, data) = load_inputs(&a.io)?;
    let video = find_video(&data, &a.video_id)?;
    let method = Method::from(a.method);
    let config = RelevanceConfig::new(net.input_shape()[0], video.pixel_range).with_target(target);
    config_block(
        out,
        "explain",
        &[
            ("seed", a.common.seed.to_string()),
            ("jobs", jobs.to_string()),
            ("net", path_str(&a.io.net)),
            ("data", path_str(&a.io.data)),
            ("video_id", video.id.clone()),
            ("offset", a.offset.to_string()),
            ("step", step.to_string()),
            ("method", method.to_string()),
            ("class", a.class.clone()),
            ("epsilon", config.epsilon.to_string()),
            ("heatmap_dir", a.heatmap_dir.as_deref().map_or("none".into(), path_str)),
            ("out", a.common.out.as_deref().map_or("stdout".into(), path_str)),
        ],
    )?;
    let x = extract_snippet(video, &SnippetSpec::new(a.offset, step))?;
    let trace = net.forward(&x)?;
    let map = explain_trace(&net, &trace, method, &config)?;
    if let Some(w) = &map.warning {
        return Err(Failure::Run(Error::Degenerate(w.clone())));
    }
    let profile = temporal_profile(&map)?;
    if let Some(dir) = &a.heatmap_dir {
        persist::render_heatmap(&map, dir)?;
    }
    let mut csv = String::from("video_id,method,class,explained_value,score_sum");
    for t in 1..=profile.p.len() {
        csv.push_str(&format!(",p{t}"));
    }
    csv.push('\n');
    csv.push_str(&format!(
        "{},{},{},{},{}",
        video.id,
        method,
        map.explained_class,
        fmt_f64(map.explained_value),
        fmt_f64(map.scores.sum())
    ));
    for p in &profile.p {
        csv.push(',');
        csv.push_str(&fmt_f64(*p));
    }
    csv.push('\n');
    match &a.common.out {
        Some(path) => persist::write_atomic(path, csv.as_bytes())?,
        None => emit(out, &csv)?,
    }
    Ok(())
}

fn analyze_cmd(a: &AnalyzeArgs, jobs: usize, out: &mut Vec<u8>) -> CliResult<()> {
    let step = parse_step(&a.step)?;
    let (net, data) = load_inputs(&a.io)?;
    let explainer = explainer_for(&net, &data, a.method.into())?;
    config_block(
        out,
        "analyze",
        &[
            ("seed", a.common.seed.to_string()),
            ("jobs", jobs.to_string()),
            ("net", path_str(&a.io.net)),
            ("data", path_str(&a.io.data)),
            ("method", explainer.method.to_string()),
            ("offset", a.offset.to_string()),
            ("step", step.to_string()),
            ("out", a.common.out.as_deref().map_or("stdout".into(), path_str)),
        ],
    )?;
    let pass = dataset_pass(&net, &data, &explainer, &SnippetSpec::new(a.offset, step), 1)?;
    let mean_p = pass
        .mean_p
        .ok_or_else(|| Failure::Run(Error::Degenerate("every explanation degenerated".into())))?;
    let q = fit_quadratic(&mean_p)?;
    let l = fit_linear(&mean_p)?;
    let mut csv = String::from("B,C,D,L,A,excluded,count");
    for t in 1..=mean_p.len() {
        csv.push_str(&format!(",p{t}"));
    }
    csv.push('\n');
    let head = [q.curvature, q.linear, q.intercept, l.slope, l.intercept].map(fmt_f64);
    csv.push_str(&format!("{},{},{}", head.join(","), pass.excluded, pass.count));
    for p in &mean_p {
        csv.push(',');
        csv.push_str(&fmt_f64(*p));
    }
    csv.push('\n');
    match &a.common.out {
        Some(path) => persist::write_atomic(path, csv.as_bytes())?,
        None => emit(out, &csv)?,
    }
    Ok(())
}

fn sweep_step_cmd(a: &SweepStepArgs, jobs: usize, out: &mut Vec<u8>) -> CliResult<()> {
    let path = require_out(&a.common, "sweep-step")?;
    let schedule = match a.schedule.as_str() {
        "default" => step_schedule(),
        s => s
            .split(',')
            .map(parse_step)
            .collect::<CliResult<Vec<_>>>()?,
    };
    if a.topk == 0 {
        return Err(Failure::Usage("--topk must be at least 1".into()));
    }
    let (net, data) = load_inputs(&a.io)?;
    let explainer = explainer_for(&net, &data, a.method.into())?;
    let topk = a.topk.min(net.class_count());
    config_block(
        out,
        "sweep-step",
        &[
            ("seed", a.common.seed.to_string()),
            ("jobs", jobs.to_string()),
            ("net", path_str(&a.io.net)),
            ("data", path_str(&a.io.data)),
            ("method", explainer.method.to_string()),
            ("schedule", schedule.iter().map(Step::to_string).collect::<Vec<_>>().join(",")),
            ("offset", a.offset.to_string()),
            ("topk", topk.to_string()),
            ("out", path_str(&path)),
        ],
    )?;
    let rows = sweep_step(&net, &data, &explainer, &schedule, a.offset, topk)?;
    persist::write_step_csv(&path, &rows)?;
    let best = best_step(&rows).map_or("tie".to_string(), |s| s.to_string());
    emit(out, &format!("rows {}\nbest_step {best}\n", rows.len()))
}

fn sweep_offset_cmd(a: &SweepOffsetArgs, jobs: usize, out: &mut Vec<u8>) -> CliResult<()> {
    let path = require_out(&a.common, "sweep-offset")?;
    let step = parse_step(&a.step)?;
    let offsets = match a.schedule.as_str() {
        "default" => offset_schedule(),
        s => parse_list("--schedule", s)?,
    };
    let (net, data) = load_inputs(&a.io)?;
    let explainer = explainer_for(&net, &data, a.method.into())?;
    config_block(
        out,
        "sweep-offset",
        &[
            ("seed", a.common.seed.to_string()),
            ("jobs", jobs.to_string()),
            ("net", path_str(&a.io.net)),
            ("data", path_str(&a.io.data)),
            ("method", explainer.method.to_string()),
            ("schedule", offsets.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
            ("step", step.to_string()),
            ("out", path_str(&path)),
        ],
    )?;
    let rows = sweep_offset(&net, &data, &explainer, &offsets, step)?;
    persist::write_offset_csv(&path, &rows)?;
    emit(out, &format!("rows {}\n", rows.len()))
}

fn eval_cmd(a: &EvalArgs, jobs: usize, out: &mut Vec<u8>) -> CliResult<()> {
    let step = parse_step(&a.step)?;
    if a.topk == 0 {
        return Err(Failure::Usage("--topk must be at least 1".into()));
    }
    let (net, data) = load_inputs(&a.io)?;
    let topk = a.topk.min(net.class_count());
    config_block(
        out,
        "eval",
        &[
            ("seed", a.common.seed.to_string()),
            ("jobs", jobs.to_string()),
            ("net", path_str(&a.io.net)),
            ("data", path_str(&a.io.data)),
            ("topk", topk.to_string()),
            ("offset", a.offset.to_string()),
            ("step", step.to_string()),
            ("out", a.common.out.as_deref().map_or("stdout".into(), path_str)),
        ],
    )?;
    let snippet = SnippetSpec::new(a.offset, step);
    let hits: Vec<bool> = {
        use rayon::prelude::*;
        data.par_iter()
            .map(|v| -> crate::error::Result<bool> {
                let x = extract_snippet(v, &snippet)?;
                crate::analysis::top_k_hit(net.forward(&x)?.logits(), v.true_class, topk)
            })
            .collect::<crate::error::Result<_>>()?
    };
    let count = hits.len();
    let correct = hits.iter().filter(|&&h| h).count();
    let csv = format!(
        "topk,accuracy,hits,count\n{topk},{},{correct},{count}\n",
        fmt_f64(correct as f64 / count.max(1) as f64)
    );
    match &a.common.out {
        Some(path) => persist::write_atomic(path, csv.as_bytes())?,
        None => emit(out, &csv)?,
    }
    Ok(())
}
