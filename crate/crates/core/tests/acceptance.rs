//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. `cargo test --release --test acceptance`.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{he_net, he_net_with_bias, oracle_dtd, random_tensor, small_nets};
use vidrel::analysis::{best_step, dataset_pass, fit_linear, fit_quadratic, sweep_step, Explainer};
use vidrel::network::{gradient, predict, Architecture, NetworkSpec};
use vidrel::persist;
use vidrel::relevance::{dtd_explain, explain, sensitivity_explain, Method, RelevanceConfig, Target};
use vidrel::sampler::{extract_snippet, offset_schedule, step_schedule, SnippetSpec, Step, Video};
use vidrel::synthlab::{accuracy, generate_dataset, init_params, train, SeededRng, SynthConfig, TrainConfig, WeightInit};
use vidrel::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn bias_free_mini_c3d() -> NetworkSpec {
    he_net(Architecture::mini_c3d(8, false), 101)
}

fn dtd_config() -> RelevanceConfig {
    RelevanceConfig::new(1, (0.0, 1.0))
}

fn conservation() -> Outcome {
    let start = Instant::now();
    let net = bias_free_mini_c3d();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..100 {
        let x = random_tensor(&[1, 16, 24, 24], 2000 + seed, 0.0, 1.0);
        let map = explain(&net, &x, Method::Dtd, &dtd_config()).unwrap();
        if map.explained_value > 0.0 {
            worst = worst.max((map.scores.sum() - map.explained_value).abs() / map.explained_value);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        checked > 0 && worst <= 1e-6 && elapsed <= Duration::from_secs(60),
        format!("{checked}/100 inputs with f(x) > 0, worst relative leak {worst:.2e} (≤ 1e-6), {:.1} s (≤ 60 s)", elapsed.as_secs_f64()),
    )
}

fn rule_oracles() -> Outcome {
    let mut worst = 0.0f64;
    let nets = small_nets();
    for (net, x) in &nets {
        let trace = net.forward(x).unwrap();
        for class in 0..net.class_count() {
            let config = RelevanceConfig::new(net.input_shape()[0], (0.0, 1.0)).with_target(Target::Class(class));
            let map = dtd_explain(net, &trace, &config).unwrap();
            let expect = oracle_dtd(net, x.data(), class, 0.0, 1.0, config.epsilon);
            for (a, b) in map.scores.data().iter().zip(&expect) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(worst <= 1e-10, format!("{} networks, worst element error {worst:.2e} (≤ 1e-10)", nets.len()))
}

fn gradients() -> Outcome {
    let net = he_net_with_bias(Architecture::mini_c3d(8, true), 102);
    let x = random_tensor(&[1, 16, 24, 24], 103, 0.0, 1.0);
    let (_, class) = predict(&net, &x).unwrap();
    let g = gradient(&net, &x, class).unwrap();
    let mut rng = SeededRng::new(104);
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    let h = 1e-3;
    let logit = |x: &Tensor| net.forward(x).unwrap().logits()[class];
    let f0 = logit(&x);
    let mut checked = 0;
    while checked < 20 {
        let i = rng.below(x.len());
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let (fp, fm) = (logit(&plus), logit(&minus));
        // the network is piecewise linear; a non-zero second difference means a
        // ReLU or max-pool switch inside the stencil, where no derivative exists
        if (fp - 2.0 * f0 + fm).abs() > 1e-9 * (1.0 + f0.abs()) {
            redrawn += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let scale = g.data()[i].abs().max(fd.abs());
        if scale > 0.0 {
            worst = worst.max((fd - g.data()[i]).abs() / scale);
        }
        checked += 1;
    }
    let map = sensitivity_explain(&net, &x, class).unwrap();
    let norm: f64 = g.data().iter().map(|v| v * v).sum();
    let bitwise = map.scores.sum().to_bits() == norm.to_bits();
    outcome(
        worst <= 1e-3 && bitwise,
        format!("worst relative difference {worst:.2e} over 20 coordinates (≤ 1e-3; {redrawn} redrawn for a kink inside ±h), sensitivity sum equals squared gradient norm bit-wise: {bitwise}"),
    )
}

fn fit_recovery() -> Outcome {
    let q: Vec<f64> = (1..=16).map(|t| 0.0010 * (t * t) as f64 - 0.0168 * t as f64 + 0.1085).collect();
    let l: Vec<f64> = (1..=16).map(|t| 0.0007 * t as f64 + 0.0558).collect();
    let fq = fit_quadratic(&q).unwrap();
    let fl = fit_linear(&l).unwrap();
    let recovery = [
        (fq.curvature - 0.0010).abs(),
        (fq.linear + 0.0168).abs(),
        (fq.intercept - 0.1085).abs(),
        (fl.slope - 0.0007).abs(),
        (fl.intercept - 0.0558).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mut rng = SeededRng::new(105);
    let mut property = 0.0f64;
    for _ in 0..200 {
        let p: Vec<f64> = (0..16).map(|_| 0.2 * rng.uniform()).collect();
        let shift = 0.2 * rng.uniform() - 0.1;
        let shifted: Vec<f64> = p.iter().map(|v| v + shift).collect();
        let reversed: Vec<f64> = p.iter().rev().copied().collect();
        let (b, l) = (fit_quadratic(&p).unwrap().curvature, fit_linear(&p).unwrap().slope);
        property = property
            .max((fit_quadratic(&shifted).unwrap().curvature - b).abs())
            .max((fit_linear(&shifted).unwrap().slope - l).abs())
            .max((fit_quadratic(&reversed).unwrap().curvature - b).abs())
            .max((fit_linear(&reversed).unwrap().slope + l).abs());
    }
    outcome(
        recovery <= 1e-9 && property <= 1e-12,
        format!("coefficient error {recovery:.2e} (≤ 1e-9), translation/reversal error {property:.2e} (≤ 1e-12)"),
    )
}

fn late_early_ratio(p: &[f64]) -> f64 {
    let late = (p[14] + p[15]) / 2.0;
    let early = p[..14].iter().sum::<f64>() / 14.0;
    late / early
}

/// 5a and 5b share one trained network.
fn cue_task() -> (Outcome, Outcome) {
    let start = Instant::now();
    let data_config = SynthConfig {
        cue_frames: Some(vec![14, 15]),
        noise_std: 0.05,
        seed: 1,
        ..SynthConfig::default()
    };
    let data = generate_dataset(&data_config, 128).unwrap();
    let arch = Architecture::mini_c3d(8, true);
    // He scale in the convolutions, small dense layers
    let init = WeightInit::Uniform(vec![(6.0f64 / 27.0).sqrt(), (6.0f64 / 216.0).sqrt(), 0.001, 0.1]);
    let untrained = NetworkSpec::new(arch.clone(), init_params(&arch, &init, 3).unwrap()).unwrap();
    let config = TrainConfig {
        learning_rate: 0.05,
        epochs: 25,
        batch_size: 8,
        seed: 5,
        weight_init: init,
        snippet: SnippetSpec::default(),
    };
    let trained = train(&untrained, &data, &config).unwrap();
    let train_acc = accuracy(&trained, &data, &SnippetSpec::default()).unwrap();
    let explainer = Explainer::new(Method::Dtd, dtd_config());
    let profile = |net: &NetworkSpec| dataset_pass(net, &data, &explainer, &SnippetSpec::default(), 1).unwrap().mean_p;
    let (Some(p_trained), Some(p_untrained)) = (profile(&trained), profile(&untrained)) else {
        let fail = || outcome(false, "every explanation was degenerate");
        return (fail(), fail());
    };
    let ratio = late_early_ratio(&p_trained);
    let slope = fit_linear(&p_trained).unwrap().slope;
    let elapsed = start.elapsed();
    let a = outcome(
        train_acc >= 0.9 && ratio >= 2.0 && slope > 0.0 && elapsed <= Duration::from_secs(600),
        format!(
            "train accuracy {train_acc:.3} (≥ 0.9), late/early share ratio {ratio:.3} (≥ 2), L = {slope:.5} (> 0), {:.0} s (≤ 600 s)",
            elapsed.as_secs_f64()
        ),
    );
    let delta = p_trained.iter().zip(&p_untrained).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let b = outcome(delta >= 0.02, format!("max_t |ΔP_t| trained vs untrained {delta:.4} (≥ 0.02)"));
    (a, b)
}

fn step_sweep() -> Outcome {
    let config = SynthConfig {
        class_count: 4,
        speeds: vec![2],
        noise_std: 0.05,
        seed: 1,
        ..SynthConfig::default()
    };
    let data = generate_dataset(&config, 64).unwrap();
    let held_out = generate_dataset(&SynthConfig { seed: 2, ..config }, 64).unwrap();
    let net = he_net(Architecture::mini_c3d(4, true), 3);
    let train_config = TrainConfig {
        learning_rate: 0.01,
        epochs: 10,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let net = train(&net, &data, &train_config).unwrap();
    let schedule: Vec<Step> = ["1/2", "1", "2", "4"].iter().map(|s| s.parse().unwrap()).collect();
    let rows = sweep_step(&net, &held_out, &Explainer::new(Method::Dtd, dtd_config()), &schedule, 0, 1).unwrap();
    let accs: Vec<f64> = rows.iter().map(|r| r.topk_accuracy).collect();
    let spread = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - accs.iter().copied().fold(f64::INFINITY, f64::min);
    let best = best_step(&rows);
    let listing: Vec<String> = rows.iter().map(|r| format!("{}: {:.3}", r.step, r.topk_accuracy)).collect();
    outcome(
        spread >= 0.02 && best.is_some(),
        format!(
            "held-out accuracy [{}], spread {:.1} pp (≥ 2), best step {}",
            listing.join(", "),
            100.0 * spread,
            best.map_or("tie".into(), |s| s.to_string())
        ),
    )
}

fn counting_video(n: usize) -> Video {
    Video::new(Tensor::from_fn(&[1, n, 1, 1], |i| i as f64), (0.0, n as f64), "count", 0).unwrap()
}

fn sampler() -> Outcome {
    let frames = |n, offset, step: &str| -> Vec<usize> {
        let spec = SnippetSpec::new(offset, step.parse().unwrap());
        extract_snippet(&counting_video(n), &spec).unwrap().data().iter().map(|&v| v as usize).collect()
    };
    let repeat = frames(40, 5, "1/16") == vec![5; 16];
    let identity = frames(40, 0, "1") == (0..16).collect::<Vec<_>>();
    let double = frames(100, 8, "2") == (8..=38).step_by(2).collect::<Vec<_>>();
    let steps: Vec<String> = step_schedule().iter().map(Step::to_string).collect();
    let steps_ok = steps == ["1/16", "1/8", "1/4", "1/2", "1", "2", "4", "8", "16", "32"];
    let offsets_ok = offset_schedule() == (0..=256).step_by(8).collect::<Vec<_>>();
    outcome(
        repeat && identity && double && steps_ok && offsets_ok,
        format!("1/16 repetition {repeat}, identity {identity}, step 2 from 8 {double}, step schedule {steps_ok}, offset schedule {offsets_ok}"),
    )
}

fn persistence(dir: &Path) -> Outcome {
    let net = he_net_with_bias(Architecture::mini_c3d(8, true), 106);
    let net_path = dir.join("net.vxtc");
    persist::save_network(&net_path, &net).unwrap();
    let back = persist::load_network(&net_path).unwrap();
    let net_ok = back.architecture() == net.architecture() && back.params() == net.params() && {
        let x = random_tensor(&[1, 16, 24, 24], 107, 0.0, 1.0);
        let bits = |n: &NetworkSpec| n.forward(&x).unwrap().logits().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        bits(&net) == bits(&back)
    };

    let videos = generate_dataset(&SynthConfig::default(), 8).unwrap();
    let data_path = dir.join("data.vxtc");
    persist::save_dataset(&data_path, &videos).unwrap();
    let loaded = persist::load_dataset(&data_path).unwrap();
    let data_ok = loaded.len() == videos.len()
        && loaded.iter().zip(&videos).all(|(a, b)| {
            a.id == b.id
                && a.true_class == b.true_class
                && a.frames.shape() == b.frames.shape()
                && a.frames.data().iter().zip(b.frames.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });

    let x = extract_snippet(&videos[0], &SnippetSpec::default()).unwrap();
    let map = explain(&bias_free_mini_c3d(), &x, Method::Dtd, &dtd_config()).unwrap();
    let first = persist::render_heatmap(&map, &dir.join("heat_a")).unwrap();
    let second = persist::render_heatmap(&map, &dir.join("heat_b")).unwrap();
    let header = b"P6\n24 24\n255\n";
    let mut identical = first.len() == 16 && second.len() == 16;
    let mut p6 = true;
    for (a, b) in first.iter().zip(&second) {
        let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        identical &= a == b;
        p6 &= a.starts_with(header) && a.len() == header.len() + 24 * 24 * 3;
    }
    outcome(
        net_ok && data_ok && identical && p6,
        format!("network bit-exact {net_ok}, dataset bit-exact {data_ok}, heatmaps identical {identical}, P6 header {p6}"),
    )
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = vidrel::cli::run(std::iter::once("vidrel").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned() + &String::from_utf8_lossy(&err))
}

fn determinism(dir: &Path) -> Outcome {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = s(&dir.join("cli_data.vxtc"));
    let net = s(&dir.join("cli_net.vxtc"));
    let steps = [
        cli(&["gen-data", "--count", "16", "--classes", "4", "--seed", "9", "--out", &data]),
        cli(&["train", "--data", &data, "--epochs", "2", "--seed", "9", "--out", &net]),
    ];
    if let Some((code, msg)) = steps.iter().find(|(code, _)| *code != 0) {
        return outcome(false, format!("setup failed with exit {code}: {msg}"));
    }
    let mut csvs = Vec::new();
    for jobs in ["1", "8"] {
        let out = dir.join(format!("sweep_{jobs}.csv"));
        let (code, msg) = cli(&["--jobs", jobs, "sweep-step", "--net", &net, "--data", &data, "--out", &s(&out)]);
        if code != 0 {
            return outcome(false, format!("sweep-step --jobs {jobs} failed with exit {code}: {msg}"));
        }
        csvs.push(std::fs::read(&out).unwrap());
    }
    let same = csvs[0] == csvs[1];
    outcome(same, format!("sweep-step CSVs with --jobs 1 and --jobs 8 byte-identical: {same} ({} bytes)", csvs[0].len()))
}

fn timing(suite: Duration) -> Outcome {
    let net = bias_free_mini_c3d();
    let x = random_tensor(&[1, 16, 24, 24], 108, 0.0, 1.0);
    let mut slowest = Duration::ZERO;
    for _ in 0..3 {
        let start = Instant::now();
        explain(&net, &x, Method::Dtd, &dtd_config()).unwrap();
        slowest = slowest.max(start.elapsed());
    }
    outcome(
        slowest <= Duration::from_secs(1) && suite <= Duration::from_secs(900),
        format!(
            "single 16×24×24 explanation {:.1} ms (≤ 1 s), acceptance run so far {:.0} s (≤ 900 s for the whole suite)",
            1e3 * slowest.as_secs_f64(),
            suite.as_secs_f64()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("1 conservation", conservation());
    report("2 rule oracles", rule_oracles());
    report("3 gradient and sensitivity", gradients());
    report("4 fit recovery", fit_recovery());
    let (a, b) = cue_task();
    report("5a cue locality", a);
    report("5b trained vs untrained", b);
    report("5c step sweep", step_sweep());
    report("6 sampler", sampler());
    report("7 persistence", persistence(dir.path()));
    report("8 determinism", determinism(dir.path()));
    report("9 timing", timing(start.elapsed()));
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
