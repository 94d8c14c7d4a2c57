//! Acceptance checks 1 to 10. Prints one PASS or FAIL line per criterion
//! and exits nonzero when any fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use spanet::manifest::Split;
use spanet::{checkpoint, commands, manifest, CliError, RunConfig};
use spanet_core::blocks::{AttentionBlock, AttentionConfig, SpConfig};
use spanet_core::cost::{conv_flops, ratio_sweep, sp_block_cost, sp_flops_ratio, RATIO_GRID};
use spanet_core::gradcheck;
use spanet_core::loss::{circle_loss_scores, CircleLossConfig, Weighting};
use spanet_core::metrics::f1_score;
use spanet_core::network::{build_network, NetworkConfig, STAGE_TABLE};
use spanet_core::{ParamStore, Shape, Tensor};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Outcome {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let cases = gradcheck::suite(2024, 40).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for op in ["conv2d", "depthwise", "layer norm", "softmax", "attention", "SP params", "SP&A", "circle loss", "toy network"] {
        ensure(cases.iter().any(|c| c.name.contains(op)), || format!("no case covers {op}"))?;
    }
    let worst = cases
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .ok_or("empty suite")?;
    let bad: Vec<String> = cases
        .iter()
        .filter(|c| !(c.report.max_rel_error < TOL))
        .map(|c| format!("{} {:.2e}", c.name, c.report.max_rel_error))
        .collect();
    ensure(bad.is_empty(), || format!("over {TOL:e}: {}", bad.join(", ")))?;
    ensure(elapsed < Duration::from_secs(60), || format!("suite took {:.1}s", elapsed.as_secs_f64()))?;
    Ok(format!(
        "{} cases, worst {:.2e} ({}), {:.1}s",
        cases.len(),
        worst.report.max_rel_error,
        worst.name,
        elapsed.as_secs_f64()
    ))
}

fn halving() -> Outcome {
    let mut parts = Vec::new();
    for c in [128usize, 256, 512] {
        let ratio = sp_flops_ratio(c, c, 0.5).map_err(|e| e.to_string())?;
        let cfg = SpConfig::new(c, c, 0.5).map_err(|e| e.to_string())?;
        let direct = sp_block_cost("sp", &cfg, 8, 8).flops as f64 / conv_flops(c, c, 1, 8, 8) as f64;
        ensure(ratio == direct, || format!("C={c}: formula {ratio} but layer counts give {direct}"))?;
        ensure(ratio <= 0.55, || format!("C={c}: ratio {ratio}"))?;
        parts.push(format!("{c}: {ratio:.4}"));
    }
    Ok(parts.join(", "))
}

fn ratio_ordering() -> Outcome {
    let sweep = ratio_sweep(&NetworkConfig::paper(11), &RATIO_GRID).map_err(|e| e.to_string())?;
    let listed: Vec<String> = sweep.iter().map(|(r, p, _)| format!("{r}:{:.2}M", *p as f64 / 1e6)).collect();
    ensure(sweep.windows(2).all(|w| w[0].1 > w[1].1), || format!("not strictly decreasing: {}", listed.join(" ")))?;
    let half = sweep.iter().find(|s| s.0 == 0.5).ok_or("r = 0.5 missing from the grid")?.1;
    ensure((2_000_000..=3_500_000).contains(&half), || format!("r = 0.5 total {half}"))?;
    Ok(listed.join(" > "))
}

fn metric_fidelity() -> Outcome {
    let f1 = f1_score(0.9732, 0.9903);
    ensure((f1 - 0.9817).abs() <= 1e-4, || format!("F1 = {f1}"))?;
    Ok(format!("F1 = {f1:.6}"))
}

fn attention_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::<f64>::new();
    let block = AttentionBlock::new(&mut store, &mut rng, "att", AttentionConfig::new(16, 4).map_err(|e| e.to_string())?);
    let shape = Shape::new(3, 16, 7, 5);
    let x = Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();

    let mut zero_w2 = store.clone();
    let s = zero_w2.value(block.w2).shape();
    *zero_w2.value_mut(block.w2) = Tensor::zeros(s);
    let y = block.apply(&zero_w2, &x).map_err(|e| e.to_string())?;
    let same = y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same, || "w2 = 0 output differs from the input".into())?;

    let mut zero_wg = store;
    let s = zero_wg.value(block.w_g).shape();
    *zero_wg.value_mut(block.w_g) = Tensor::zeros(s);
    let (_, context) = block.context(&zero_wg, &x).map_err(|e| e.to_string())?;
    let plane = shape.h * shape.w;
    let mut worst = 0.0f64;
    for (i, chunk) in x.data().chunks(plane).enumerate() {
        let mean = chunk.iter().sum::<f64>() / plane as f64;
        worst = worst.max((context.data()[i] - mean).abs());
    }
    ensure(worst < 1e-6, || format!("context differs from the mean by {worst:e}"))?;
    Ok(format!("identity bitwise, context within {worst:.1e} of the mean"))
}

fn grid_monotone(values: &[f64], increasing: bool, strict: bool) -> bool {
    values.windows(2).all(|w| {
        let step = if increasing { w[1] - w[0] } else { w[0] - w[1] };
        if strict {
            step > 0.0
        } else {
            step >= 0.0
        }
    }) && values.first() != values.last()
}

fn circle_sanity() -> Outcome {
    let grid: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
    let mut worst = 0.0f64;
    for gamma in [1.0, 32.0] {
        let cfg = CircleLossConfig { gamma, margin: 0.25, weighting: Weighting::Pinned };
        for &s in &grid {
            worst = worst.max((circle_loss_scores(&[s], &[s], &cfg).0 - std::f64::consts::LN_2).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("symmetric loss off log 2 by {worst:e}"))?;

    // at the default scale a far-off pair's term can drop below the
    // rounding of the others, so only strictness needs the small scale
    for (gamma, strict) in [(32.0, false), (2.0, true)] {
        let pinned = CircleLossConfig { gamma, weighting: Weighting::Pinned, ..CircleLossConfig::default() };
        for fixed in [-0.5, 0.0, 0.5] {
            let over_sp: Vec<f64> = grid.iter().map(|&sp| circle_loss_scores(&[sp], &[fixed, -0.2, 0.1], &pinned).0).collect();
            let over_sn: Vec<f64> = grid.iter().map(|&sn| circle_loss_scores(&[fixed], &[sn, -0.2, 0.1], &pinned).0).collect();
            ensure(grid_monotone(&over_sp, false, strict), || format!("pinned loss (gamma {gamma}) not decreasing in s_p at s_n = {fixed}"))?;
            ensure(grid_monotone(&over_sn, true, strict), || format!("pinned loss (gamma {gamma}) not increasing in s_n at s_p = {fixed}"))?;
        }
    }

    // self-paced weights: s_p over the whole grid, s_n from orthogonal up,
    // since (s_n + m)(s_n - m) turns at zero
    let paced = CircleLossConfig { gamma: 2.0, ..CircleLossConfig::default() };
    let upper: Vec<f64> = grid.iter().copied().filter(|&s| s >= -1e-12).collect();
    for fixed in [-0.5, 0.0, 0.5] {
        let over_sp: Vec<f64> = grid.iter().map(|&sp| circle_loss_scores(&[sp], &[fixed], &paced).0).collect();
        let over_sn: Vec<f64> = upper.iter().map(|&sn| circle_loss_scores(&[fixed], &[sn], &paced).0).collect();
        ensure(grid_monotone(&over_sp, false, true), || format!("self-paced loss not decreasing in s_p at s_n = {fixed}"))?;
        ensure(grid_monotone(&over_sn, true, true), || format!("self-paced loss not increasing in s_n at s_p = {fixed}"))?;
    }
    Ok(format!("log 2 within {worst:.1e}; pinned monotone on all 21 points, self-paced on s_p in [-1, 1] and s_n in [0, 1]"))
}

fn learning_config(root: &Path, loss: &str) -> Result<RunConfig, String> {
    let text = format!(
        "[network]\npreset = toy\nratio = 0.5\n\n\
         [training]\nepochs = 30\nbatch_size = 16\nloss = {loss}\nseed = 7\n\n\
         [data]\nmanifest = {root}/data/manifest.csv\nclasses = Remain, MultiDots, Scratch, Ball\n\
         per_class = 125\nimage_size = 64\ngen_seed = 1000\ntest_fraction = 0.2\n\n\
         [output]\nrun_dir = {root}/{loss}\n",
        root = root.display()
    );
    RunConfig::parse(&text).map_err(|e| e.to_string())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gen = commands::gen_data(&learning_config(dir.path(), "circle")?).map_err(|e| e.to_string())?;
    ensure(gen.per_split == [400, 0, 100], || format!("splits {:?}", gen.per_split))?;
    let mut parts = Vec::new();
    for loss in ["circle", "cross_entropy"] {
        let cfg = learning_config(dir.path(), loss)?;
        let start = Instant::now();
        let summary = commands::train(&cfg, |_| {}).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let acc = summary.report.accuracy;
        ensure(summary.eval_split == Split::Test && summary.report.num_samples() == 100, || "not scored on the 100 test images".into())?;
        ensure(summary.records.len() <= 30, || format!("{} epochs", summary.records.len()))?;
        ensure(acc >= 0.9, || format!("{loss}: test accuracy {acc:.3}"))?;
        ensure(elapsed < Duration::from_secs(600), || format!("{loss}: {:.0}s", elapsed.as_secs_f64()))?;
        parts.push(format!("{loss} {:.1}% in {:.0}s", 100.0 * acc, elapsed.as_secs_f64()));
    }
    Ok(parts.join(", "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().display();
    let config = dir.path().join("det.cfg");
    let text = format!(
        "[network]\ninput_size = 32\n\n[training]\nepochs = 3\nbatch_size = 8\naugment = true\nseed = 5\n\n\
         [data]\nmanifest = {root}/data/manifest.csv\nclasses = Remain, Scratch, Ball\nper_class = 10\n\
         image_size = 32\nval_fraction = 0.2\ntest_fraction = 0.2\n\n[output]\nrun_dir = {root}/run\n"
    );
    fs::write(&config, text).map_err(|e| e.to_string())?;
    let spanet = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_spanet")).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())
    };
    let cfg = config.to_str().ok_or("non-UTF-8 temp path")?;
    spanet(&["gen-data", "--config", cfg])?;
    let mut runs = Vec::new();
    for i in 0..2 {
        let run_dir = format!("output.run_dir={root}/run{i}");
        spanet(&["train", "--config", cfg, "--set", &run_dir])?;
        let read = |name: &str| fs::read(dir.path().join(format!("run{i}")).join(name)).map_err(|e| e.to_string());
        runs.push((read("run.csv")?, read("model.spa1")?));
    }
    ensure(runs[0].0 == runs[1].0, || "run CSVs differ".into())?;
    ensure(runs[0].1 == runs[1].1, || "checkpoints differ".into())?;
    Ok(format!("run.csv {} bytes and model.spa1 {} bytes identical", runs[0].0.len(), runs[0].1.len()))
}

fn architecture() -> Outcome {
    const REQUIRED_BLOCKS: usize = 16;
    let cfg = NetworkConfig::paper(11);
    let net = build_network::<f32>(&cfg, 0).map_err(|e| e.to_string())?;
    let res = cfg.resolutions().map_err(|e| e.to_string())?;
    let mut issues = Vec::new();
    for (i, (&(side, cin, cout, exp), b)) in STAGE_TABLE.iter().zip(&net.blocks).enumerate() {
        let c = &b.config;
        if (c.in_channels, c.out_channels, c.expansion) != (cin, cout, exp) || res[i + 1] != (side, side) {
            issues.push(format!("row {i} differs from the table"));
        }
    }
    let mut sides: Vec<usize> = res[1..].iter().map(|r| r.0).collect();
    sides.dedup();
    if sides != [256, 128, 64, 32, 16] {
        issues.push(format!("resolutions {sides:?}"));
    }
    if net.blocks.len() != REQUIRED_BLOCKS {
        issues.push(format!(
            "{} blocks built, {REQUIRED_BLOCKS} required; the table lists {} rows",
            net.blocks.len(),
            STAGE_TABLE.len()
        ));
    }
    ensure(issues.is_empty(), || issues.join("; "))?;
    Ok(format!("{} blocks, resolutions {sides:?}", net.blocks.len()))
}

fn robustness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let net = build_network::<f32>(&NetworkConfig::toy(4), 3).map_err(|e| e.to_string())?;
    let path = dir.path().join("model.spa1");
    checkpoint::save(&path, &net.params).map_err(|e| e.to_string())?;
    let good = fs::read(&path).map_err(|e| e.to_string())?;

    let mut restored = build_network::<f32>(&NetworkConfig::toy(4), 4).map_err(|e| e.to_string())?;
    checkpoint::load_into(&path, &mut restored.params).map_err(|e| e.to_string())?;
    let bitwise = net
        .params
        .iter()
        .zip(restored.params.iter())
        .all(|(a, b)| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(bitwise, || "round trip changed a weight".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let garbage: Vec<u8> = (0..4096).map(|_| rng.gen()).collect();
    let mut damaged = vec![("truncated", good[..good.len() * 2 / 3].to_vec()), ("garbage", garbage), ("empty", Vec::new())];
    let mut bad_dims = good.clone();
    let first_dim = 4 + 1 + 4 + 4 + net.params.iter().next().unwrap().name.len() + 1;
    bad_dims[first_dim..first_dim + 4].copy_from_slice(&7u32.to_le_bytes());
    damaged.push(("wrong shape", bad_dims));
    for (what, bytes) in damaged {
        fs::write(&path, bytes).map_err(|e| e.to_string())?;
        let mut store = net.params.clone();
        match checkpoint::load_into(&path, &mut store) {
            Err(e @ CliError::Format { .. }) if e.exit_code() == CliError::EXIT_DATA => {}
            other => return Err(format!("{what} checkpoint gave {other:?}")),
        }
        ensure(store == net.params, || format!("{what} checkpoint modified the weights"))?;
    }
    let classes: Vec<String> = ["Remain", "Ball"].iter().map(|s| s.to_string()).collect();
    for text in ["path,label\na.pgm,0\n", "path,label,split\na.pgm,9,train\n", "path,label,split\na.pgm,0,later\n", "path,label,split\n\"a.pgm,0,train\n"] {
        match manifest::parse(text, "m.csv", dir.path(), &classes, false) {
            Err(e @ CliError::Data(_)) if e.exit_code() == CliError::EXIT_DATA => {}
            other => return Err(format!("manifest {text:?} gave {other:?}")),
        }
    }
    Ok("round trip bitwise; damaged checkpoints and manifests give data errors".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradients),
        ("SP halving", halving),
        ("parameter ordering over r", ratio_ordering),
        ("metric fidelity", metric_fidelity),
        ("attention identity", attention_identity),
        ("circle loss sanity", circle_sanity),
        ("end-to-end learning", end_to_end),
        ("determinism", determinism),
        ("architecture fidelity", architecture),
        ("format robustness", robustness),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let default_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    panic::set_hook(default_hook);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
