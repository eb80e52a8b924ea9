//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any hard criterion fails.
//!
//! Criteria 5 to 7 need the MNIST IDX files in `SIMPNET_DATA_DIR` (default
//! `data/mnist` at the workspace root); without them, or with
//! `SIMPNET_SKIP_DATA=1`, they print SKIP.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use simpnet::analyzer::{audit, AuditConfig, Rule, Severity};
use simpnet::archdsl::{parse, preset, resolve_preset, Arm, LayerSpec, Preset, SIMPNET_PRESETS};
use simpnet::data::{load_cifar10_dir, load_mnist_dir, mnist_from_bytes, Split, CIFAR_BATCH_BYTES};
use simpnet::gradcheck::{run_gradcheck, GradcheckConfig, GRADCHECK_KINDS};
use simpnet::layers::{
    conv2d_forward, maxpool_backward, maxpool_forward, saf_pool_backward, saf_pool_forward, strided_conv_down_forward,
    Conv2dParams, Mode, SafPoolConfig,
};
use simpnet::{CounterRng, Error, ImageShape, Shape4, Tensor4};

const GRADCHECK_TOLERANCE: f64 = 1e-5;
const GRADCHECK_H: f64 = 1e-5;
const GRADCHECK_INSTANCES: usize = 20;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const CONV_TOLERANCE: f64 = 1e-12;
const CONV_INSTANCES: usize = 200;
const SAF_IDENTITY_INSTANCES: usize = 500;
const SAF_POOLED_UNITS: usize = 10_000;
const SAF_ZERO_FRACTION: (f64, f64) = (0.48, 0.52);
const BUDGET_TOLERANCE: f64 = 0.02;
const MNIST_EPOCHS: &str = "3";
const MNIST_MIN_TOP1: f64 = 0.975;
const MNIST_BUDGET: Duration = Duration::from_secs(30 * 60);
const ABLATION_SUBSET: &str = "10000";
const ABLATION_EPOCHS: &str = "2";
const ABLATION_BATCH: &str = "64";
const ABLATION_SEEDS: usize = 3;
const ABLATION_MARGIN: f64 = 0.003;
const DETERMINISM_STEPS: &str = "500";
const DETERMINISM_BATCH: &str = "32";

enum Status {
    Pass,
    Fail,
    /// Reported only; does not fail the suite.
    SoftFail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { status: Status::Pass, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { status: Status::Fail, detail: detail.into() }
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome { status: Status::Skip, detail: detail.into() }
}

fn main() {
    // libtest flags such as --nocapture or --quiet may be forwarded here.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "gradient check suite", gradient_checks),
        (2, "convolution oracle", convolution_oracle),
        (3, "SAF-pool identity and drop rate", saf_identity),
        (4, "parameter ledger and budgets", parameter_ledger),
        (5, "desk-scale MNIST", desk_scale_mnist),
        (6, "ablation direction", ablation_direction),
        (7, "determinism", determinism),
        (8, "audit fixtures", audit_fixtures),
        (9, "loader bit-exactness", loader_bit_exactness),
    ];
    let mut hard_failures = 0;
    for (n, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        let started = Instant::now();
        let outcome = run();
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                hard_failures += 1;
                "FAIL"
            }
            Status::SoftFail => "SOFT-FAIL",
            Status::Skip => "SKIP",
        };
        println!(
            "{tag} criterion {n} ({name}): {} [{:.1}s]",
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if hard_failures > 0 {
        println!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_dir() -> Result<PathBuf, String> {
    if std::env::var("SIMPNET_SKIP_DATA").is_ok_and(|v| v == "1") {
        return Err("SIMPNET_SKIP_DATA=1".into());
    }
    let dir = std::env::var_os("SIMPNET_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"));
    let needed = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];
    match needed.iter().find(|f| !dir.join(f).is_file()) {
        Some(f) => Err(format!("no MNIST at {} (missing {f})", dir.display())),
        None => Ok(dir),
    }
}

fn simpnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simpnet"))
        .args(args)
        .output()
        .expect("simpnet binary runs")
}

fn stderr_tail(o: &Output) -> String {
    let text = String::from_utf8_lossy(&o.stderr);
    text.lines().rev().take(3).collect::<Vec<_>>().join(" | ")
}

fn random(shape: Shape4, rng: &CounterRng) -> Tensor4<f64> {
    Tensor4::fill_random_uniform(shape, -1.0, 1.0, rng).unwrap()
}

// 1

fn gradient_checks() -> Outcome {
    let cfg = GradcheckConfig {
        seed: 0,
        instances: GRADCHECK_INSTANCES,
        h: GRADCHECK_H,
        tolerance: GRADCHECK_TOLERANCE,
        ..GradcheckConfig::default()
    };
    let started = Instant::now();
    let report = match run_gradcheck(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(format!("suite errored: {e}")),
    };
    let elapsed = started.elapsed();
    let covered = GRADCHECK_KINDS.iter().all(|k| {
        report
            .layers
            .iter()
            .any(|l| l.layer == *k && l.instances.len() >= GRADCHECK_INSTANCES)
    });
    let worst = report
        .layers
        .iter()
        .filter_map(|l| l.worst().map(|w| (l.layer.as_str(), w.rel_err)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or(("-", f64::NAN));

    // The harness must notice a wrong backward pass.
    let broken = simpnet(&["gradcheck", "--layer", "conv", "--inject-broken-layer", "conv"]);
    let catches = broken.status.code() == Some(1);
    check(
        report.passed() && covered && elapsed < GRADCHECK_BUDGET && catches,
        format!(
            "{} kinds x {} instances, worst rel err {:.2e} ({}) < {GRADCHECK_TOLERANCE:e}, {:.1}s < {}s, broken conv caught: {catches}",
            report.layers.len(),
            GRADCHECK_INSTANCES,
            worst.1,
            worst.0,
            elapsed.as_secs_f64(),
            GRADCHECK_BUDGET.as_secs()
        ),
    )
}

// 2

fn naive_conv(x: &Tensor4<f64>, p: &Conv2dParams<f64>) -> Tensor4<f64> {
    let (xs, ws) = (x.shape(), p.weight.shape());
    let (k, s, pad) = (ws.h, p.stride, p.pad);
    let ho = (xs.h + 2 * pad - k) / s + 1;
    let wo = (xs.w + 2 * pad - k) / s + 1;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, ws.n, ho, wo).unwrap()).unwrap();
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = p.bias[co];
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - pad as isize;
                                let ix = (ox * s + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    acc += x.get(n, ci, iy as usize, ix as usize) * p.weight.get(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

fn convolution_oracle() -> Outcome {
    let (mut plain, mut strided, mut worst) = (0, 0, 0.0f64);
    let mut largest = Shape4::new(1, 1, 1, 1).unwrap();
    let mut seed = 0u64;
    while plain < CONV_INSTANCES || strided < CONV_INSTANCES {
        seed += 1;
        let mut r = CounterRng::new(seed);
        let shape = Shape4::new(1 + r.below(2), 1 + r.below(4), 1 + r.below(9), 1 + r.below(9)).unwrap();
        let k = [1, 2, 3, 5][r.below(4)];
        let (c_out, pad) = (1 + r.below(4), r.below(2));
        let down = plain >= CONV_INSTANCES || (strided < CONV_INSTANCES && r.below(2) == 1);
        let stride = if down { 2 } else { 1 + r.below(2) };
        if k > shape.h + 2 * pad || k > shape.w + 2 * pad {
            continue;
        }
        let x = random(shape, &r.split(1));
        let w = random(Shape4::new(c_out, shape.c, k, k).unwrap(), &r.split(2));
        let b = random(Shape4::new(1, c_out, 1, 1).unwrap(), &r.split(3)).into_vec();
        let p = Conv2dParams::new(w, b, stride, pad).unwrap();
        let got = if down { strided_conv_down_forward(&x, &p) } else { conv2d_forward(&x, &p) };
        let got = match got {
            Ok(t) => t,
            Err(e) => return fail(format!("instance seed {seed}: {e}")),
        };
        let want = naive_conv(&x, &p);
        if got.shape() != want.shape() {
            return fail(format!("instance seed {seed}: shape {} vs {}", got.shape(), want.shape()));
        }
        let err = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if shape.len() > largest.len() {
            largest = shape;
        }
        if down {
            strided += 1;
        } else {
            plain += 1;
        }
    }
    check(
        worst <= CONV_TOLERANCE,
        format!(
            "{plain} conv2d + {strided} strided instances up to {largest}, worst |diff| {worst:.2e} <= {CONV_TOLERANCE:e}"
        ),
    )
}

// 3

fn saf_identity() -> Outcome {
    let mut mismatches = 0;
    for i in 0..SAF_IDENTITY_INSTANCES as u64 {
        let mut r = CounterRng::new(1000 + i);
        let shape = Shape4::new(1 + r.below(3), 1 + r.below(4), 2 + r.below(9), 2 + r.below(9)).unwrap();
        let window = 2 + r.below(2).min(shape.h.min(shape.w) - 2);
        let stride = 1 + r.below(window);
        let x = random(shape, &r.split(1));
        let Ok((mp, argmax)) = maxpool_forward(&x, window, stride) else { continue };
        let g = random(mp.shape(), &r.split(2));
        let mp_back = maxpool_backward(&argmax, &g, shape).unwrap();
        // drop_p = 0 in both modes, and any drop_p in eval mode.
        let drop_p = [0.0, 0.0, 0.5][(i % 3) as usize];
        let mode = if i % 3 == 1 { Mode::Train } else { Mode::Eval };
        let cfg = SafPoolConfig::new(window, stride, drop_p).unwrap();
        let saf = saf_pool_forward(&x, &cfg, mode, &r.split(3)).unwrap();
        let back = saf_pool_backward(&saf.mask, &saf.argmax, &g, shape).unwrap();
        if saf.output != mp || back != mp_back {
            mismatches += 1;
        }
    }
    let side = (SAF_POOLED_UNITS as f64).sqrt() as usize;
    let shape = Shape4::new(1, 1, 2 * side, 2 * side).unwrap();
    let x = Tensor4::<f64>::fill_random_uniform(shape, 0.5, 1.0, &CounterRng::new(7)).unwrap();
    let saf = saf_pool_forward(&x, &SafPoolConfig::new(2, 2, 0.5).unwrap(), Mode::Train, &CounterRng::new(8)).unwrap();
    let units = saf.output.len();
    let zeros = saf.output.data().iter().filter(|&&v| v == 0.0).count() as f64 / units as f64;
    let (lo, hi) = SAF_ZERO_FRACTION;
    check(
        mismatches == 0 && units == SAF_POOLED_UNITS && (lo..=hi).contains(&zeros),
        format!(
            "{SAF_IDENTITY_INSTANCES} instances, {mismatches} differ from max-pool; p=0.5 zeroes {zeros:.4} of {units} units (want [{lo}, {hi}])"
        ),
    )
}

// 4

fn within(count: usize, target: f64) -> bool {
    (count as f64 / target - 1.0).abs() <= BUDGET_TOLERANCE
}

fn parameter_ledger() -> Outcome {
    let conv = LayerSpec::Conv { kernel: 3, out: 64, stride: 1, pad: 1 };
    let conv_params = conv.param_count(ImageShape { c: 3, h: 32, w: 32 });
    let dense_params = LayerSpec::Dense { units: 10 }.param_count(ImageShape { c: 256, h: 1, w: 1 });

    let mut lines = vec![format!("conv3x3 3->64 = {conv_params}, dense 256->10 = {dense_params}")];
    let mut ok = conv_params == 1792 && dense_params == 2570;
    let targets: [(&str, f64); 5] = [
        ("simpnet-300k", 300_000.0),
        ("simpnet-600k", 600_000.0),
        ("simpnet-5m", 5_480_000.0),
        ("maxpool-vs-sconv/maxpool", 360_000.0),
        ("maxpool-vs-sconv/sconv", 360_000.0),
    ];
    for (name, target) in targets {
        let count = resolve_preset(name).and_then(|s| s.param_count());
        match count {
            Ok(c) => {
                ok &= within(c, target);
                lines.push(format!("{name} {c} ({:+.2}%)", 100.0 * (c as f64 / target - 1.0)));
            }
            Err(e) => return fail(format!("{name}: {e}")),
        }
    }

    // Same map size and channels; only the kernel differs.
    let x = ImageShape { c: 16, h: 32, w: 32 };
    let macs = |k: usize| {
        let l = LayerSpec::Conv { kernel: k, out: 16, stride: 1, pad: k / 2 };
        l.macs(x, l.output_shape(x).unwrap())
    };
    let (m5, m3) = (macs(5), macs(3));
    ok &= m5 * 9 == m3 * 25;
    lines.push(format!("MACs 5x5/3x3 = {m5}/{m3} = 25/9: {}", m5 * 9 == m3 * 25));
    check(ok, lines.join("; "))
}

// 5

fn last_test_top1(csv: &str) -> Option<f64> {
    csv.lines()
        .filter(|l| l.split(',').nth(2) == Some("test"))
        .last()?
        .split(',')
        .nth(4)?
        .parse()
        .ok()
}

fn desk_scale_mnist() -> Outcome {
    let dir = match mnist_dir() {
        Ok(d) => d,
        Err(why) => return skip(why),
    };
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("metrics.csv");
    let ckpt = tmp.path().join("model.ckpt");
    let started = Instant::now();
    let o = simpnet(&[
        "train",
        "--preset",
        "simpnet-tiny",
        "--dataset",
        "mnist",
        "--data-dir",
        dir.to_str().unwrap(),
        "--epochs",
        MNIST_EPOCHS,
        "--deterministic",
        "--out-metrics",
        csv.to_str().unwrap(),
        "--out-ckpt",
        ckpt.to_str().unwrap(),
    ]);
    let elapsed = started.elapsed();
    if !o.status.success() {
        return fail(format!("train exited {:?}: {}", o.status.code(), stderr_tail(&o)));
    }
    let text = std::fs::read_to_string(&csv).unwrap_or_default();
    let Some(top1) = last_test_top1(&text) else {
        return fail("no test row in the metrics CSV");
    };
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    check(
        top1 >= MNIST_MIN_TOP1 && elapsed <= MNIST_BUDGET,
        format!(
            "simpnet-tiny, {MNIST_EPOCHS} epochs on 60000 images: test top-1 {:.2}% (want >= {:.1}%), {:.1} min on {cores} core(s) (limit {} min)",
            100.0 * top1,
            100.0 * MNIST_MIN_TOP1,
            elapsed.as_secs_f64() / 60.0,
            MNIST_BUDGET.as_secs() / 60
        ),
    )
}

// 6

fn ablation_direction() -> Outcome {
    // Budget enforcement runs without data.
    let real = match preset("maxpool-vs-sconv") {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    let balanced = real.check_isolation(BUDGET_TOLERANCE).is_ok();
    let mut lopsided: Preset = real.clone();
    let widened = lopsided.arms[1].spec.render().replacen("conv 3 89", "conv 3 120", 1);
    lopsided.arms[1] = Arm {
        spec: parse(&widened).unwrap(),
        ..lopsided.arms[1].clone()
    };
    let refused = matches!(lopsided.check_isolation(BUDGET_TOLERANCE), Err(Error::Isolation(_)));
    if !balanced || !refused {
        return fail(format!("budget enforcement: shipped arms accepted {balanced}, unequal arms refused {refused}"));
    }

    let dir = match mnist_dir() {
        Ok(d) => d,
        Err(why) => return skip(format!("budgets enforced; training skipped: {why}")),
    };
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("records.tsv");
    let seeds = ABLATION_SEEDS.to_string();
    let o = simpnet(&[
        "ablate",
        "--preset",
        "maxpool-vs-sconv",
        "--dataset",
        "mnist",
        "--data-dir",
        dir.to_str().unwrap(),
        "--subset",
        ABLATION_SUBSET,
        "--epochs",
        ABLATION_EPOCHS,
        "--batch-size",
        ABLATION_BATCH,
        "--seeds",
        &seeds,
        "--deterministic",
        "--out-records",
        records.to_str().unwrap(),
    ]);
    if !o.status.success() {
        return fail(format!("ablate exited {:?}: {}", o.status.code(), stderr_tail(&o)));
    }
    let text = std::fs::read_to_string(&records).unwrap_or_default();
    let mut top1 = std::collections::BTreeMap::<String, Vec<f64>>::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if let (Some(arm), Some(v)) = (f.get(1), f.get(7).and_then(|v| v.parse::<f64>().ok())) {
            top1.entry(arm.to_string()).or_default().push(v);
        }
    }
    let mean = |arm: &str| {
        top1.get(arm)
            .filter(|v| v.len() == ABLATION_SEEDS)
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (Some(mp), Some(sc)) = (mean("maxpool"), mean("sconv")) else {
        return fail(format!("records incomplete: {top1:?}"));
    };
    let per_seed = |arm: &str| top1[arm].iter().map(|v| format!("{:.2}", 100.0 * v)).collect::<Vec<_>>().join("/");
    let detail = format!(
        "budgets within {:.0}%; maxpool mean {:.2}% ({}) vs sconv {:.2}% ({}), margin {:+.2} pp (want >= -{:.1})",
        100.0 * BUDGET_TOLERANCE,
        100.0 * mp,
        per_seed("maxpool"),
        100.0 * sc,
        per_seed("sconv"),
        100.0 * (mp - sc),
        100.0 * ABLATION_MARGIN
    );
    if mp >= sc - ABLATION_MARGIN {
        pass(detail)
    } else {
        Outcome { status: Status::SoftFail, detail }
    }
}

// 7

fn determinism() -> Outcome {
    let dir = match mnist_dir() {
        Ok(d) => d,
        Err(why) => return skip(why),
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let csv = tmp.path().join(format!("{run}.csv"));
        let ckpt = tmp.path().join(format!("{run}.ckpt"));
        let o = simpnet(&[
            "train",
            "--preset",
            "simpnet-tiny",
            "--data-dir",
            dir.to_str().unwrap(),
            "--deterministic",
            "--seed",
            "7",
            "--max-steps",
            DETERMINISM_STEPS,
            "--batch-size",
            DETERMINISM_BATCH,
            "--out-metrics",
            csv.to_str().unwrap(),
            "--out-ckpt",
            ckpt.to_str().unwrap(),
        ]);
        if !o.status.success() {
            return fail(format!("run {run} exited {:?}: {}", o.status.code(), stderr_tail(&o)));
        }
        outputs.push((std::fs::read(csv).unwrap(), std::fs::read(ckpt).unwrap()));
    }
    let csv_same = outputs[0].0 == outputs[1].0;
    let ckpt_same = outputs[0].1 == outputs[1].1;
    check(
        csv_same && ckpt_same,
        format!(
            "two runs of {DETERMINISM_STEPS} steps with seed 7: CSV identical {csv_same} ({} bytes), checkpoint identical {ckpt_same} ({} bytes)",
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
    )
}

// 8

fn audit_fixtures() -> Outcome {
    let cfg = AuditConfig::default();
    let fixture = |name: &str| {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
        parse(&std::fs::read_to_string(path).unwrap()).unwrap()
    };
    let run = |spec: &simpnet::ArchSpec| audit(spec, spec.input, &cfg);
    let mut results = Vec::new();

    let early = run(&fixture("early-1x1.arch"));
    results.push(("early-1x1 fails R2", early.has(Rule::R2, Severity::Fail)));
    let pool = run(&fixture("pool-after-conv1.arch"));
    results.push(("pool-after-conv1 warns R3", pool.has(Rule::R3, Severity::Warn)));
    for name in ["balanced-vs-wide-end-128k", "balanced-vs-wide-end-8m"] {
        let p = preset(name).unwrap();
        let wide = run(&p.arm("wide-end").unwrap().spec);
        let balanced = run(&p.arm("balanced").unwrap().spec);
        results.push((
            if name.ends_with("128k") { "wide-end 128k warns R4, balanced does not" } else { "wide-end 8m warns R4, balanced does not" },
            wide.has(Rule::R4, Severity::Warn) && !balanced.has(Rule::R4, Severity::Warn),
        ));
    }
    let clean = SIMPNET_PRESETS.iter().all(|n| run(&resolve_preset(n).unwrap()).count(Severity::Fail) == 0);
    results.push(("SimpNet presets have zero fails", clean));

    let spec = resolve_preset("simpnet-5m").unwrap();
    let (a, b) = (run(&spec), run(&spec.clone()));
    let lib_same = a.to_string() == b.to_string() && a.records() == b.records();
    let cli = || simpnet(&["analyze", "--preset", "simpnet-5m"]).stdout;
    results.push(("identical specs audit byte-identically", lib_same && cli() == cli()));

    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    check(
        failed.is_empty(),
        if failed.is_empty() {
            results.iter().map(|r| r.0).collect::<Vec<_>>().join("; ")
        } else {
            format!("wrong: {}", failed.join("; "))
        },
    )
}

// 9

fn loader_bit_exactness() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    match mnist_dir() {
        Ok(dir) => {
            for (split, prefix) in [(Split::Train, "train"), (Split::Test, "t10k")] {
                let images = std::fs::read(dir.join(format!("{prefix}-images-idx3-ubyte"))).unwrap();
                let labels = std::fs::read(dir.join(format!("{prefix}-labels-idx1-ubyte"))).unwrap();
                let round_trip = load_mnist_dir(&dir, split).and_then(|d| d.to_idx());
                let same = matches!(&round_trip, Ok((i, l)) if *i == images && *l == labels);
                ok &= same;
                notes.push(format!("MNIST {prefix} round trip identical {same}"));
            }
        }
        Err(why) => notes.push(format!("MNIST round trip skipped ({why})")),
    }

    // Synthetic CIFAR-10 test batch: exactly 10000 records loads, any other
    // size is refused.
    let tmp = tempfile::tempdir().unwrap();
    let batch = |len: usize| {
        let bytes: Vec<u8> = (0..len)
            .map(|i| if i % 3073 == 0 { ((i / 3073) % 10) as u8 } else { (i % 251) as u8 })
            .collect();
        std::fs::write(tmp.path().join("test_batch.bin"), bytes).unwrap();
        load_cifar10_dir(tmp.path(), Split::Test)
    };
    let exact_ok = batch(CIFAR_BATCH_BYTES).is_ok_and(|d| d.len() == 10_000);
    let long = matches!(batch(CIFAR_BATCH_BYTES + 1), Err(Error::Format(_)));
    let short = matches!(batch(CIFAR_BATCH_BYTES - 3073), Err(Error::Format(_)));
    let cifar_ok = CIFAR_BATCH_BYTES == 10_000 * 3073 && exact_ok && long && short;
    ok &= cifar_ok;
    notes.push(format!(
        "CIFAR batch of {CIFAR_BATCH_BYTES} bytes loads {exact_ok}, +1 byte refused {long}, one record short refused {short}"
    ));

    // Malformed IDX: every error is a format error, never a panic.
    let images = {
        let mut v = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        v.extend([1, 2, 3, 4, 5, 6, 7, 8]);
        v
    };
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 4];
    let valid = mnist_from_bytes("t", &images, &labels).is_ok();
    let mut cases: Vec<(String, Vec<u8>, Vec<u8>)> = Vec::new();
    let mut bad_magic = images.clone();
    bad_magic[3] = 1;
    cases.push(("bad image magic".into(), bad_magic, labels.clone()));
    let mut bad_label_magic = labels.clone();
    bad_label_magic[2] = 9;
    cases.push(("bad label magic".into(), images.clone(), bad_label_magic));
    for cut in 0..images.len() {
        cases.push((format!("images cut at {cut}"), images[..cut].to_vec(), labels.clone()));
    }
    for cut in 0..labels.len() {
        cases.push((format!("labels cut at {cut}"), images.clone(), labels[..cut].to_vec()));
    }
    let rng = CounterRng::new(99);
    for i in 0..200u64 {
        let len = (rng.at(2 * i) % 64) as usize;
        let junk: Vec<u8> = (0..len as u64).map(|j| rng.split(i).at(j) as u8).collect();
        cases.push((format!("random bytes {i}"), junk, labels.clone()));
    }
    let mut wrong = Vec::new();
    for (name, img, lab) in &cases {
        let got = std::panic::catch_unwind(|| mnist_from_bytes("t", img, lab));
        match got {
            Err(_) => wrong.push(format!("{name}: panicked")),
            Ok(Err(Error::Format(_))) => {}
            Ok(Err(e)) => wrong.push(format!("{name}: {e}")),
            Ok(Ok(_)) => wrong.push(format!("{name}: accepted")),
        }
    }
    ok &= valid && wrong.is_empty();
    notes.push(format!("{} malformed IDX inputs -> format errors: {}", cases.len(), if wrong.is_empty() { "all".to_string() } else { wrong.join(", ") }));
    check(ok, notes.join("; "))
}
