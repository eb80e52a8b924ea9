//! `simpnet` command-line front end.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 bad arguments or
//! architecture, 3 data or file format, 4 numerical abort, 5 shape collapse
//! found by `analyze`, 70 internal invariant violated.

mod args;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use simpnet::analyzer::{audit, AuditConfig};
use simpnet::archdsl::{preset, resolve_preset};
use simpnet::data::{load_cifar10_dir, load_mnist_dir, AugmentPolicy, Dataset, Split};
use simpnet::gradcheck::{run_gradcheck, GradcheckConfig};
use simpnet::train::{ablate, evaluate, train_loop, AblationConfig, TrainConfig, METRICS_HEADER};
use simpnet::{parse, ArchSpec, Error, ImageShape};

use args::*;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Io(_) | Error::Format(_) | Error::Compatibility(_) => 3,
        Error::NonFinite(_) => 4,
        Error::Invariant(_) => 70,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn echo(config: serde_json::Value) {
    eprintln!("config: {config}");
}

/// Architecture from `--arch` or `--preset`, plus where it came from.
fn resolve_arch(a: &ArchArgs) -> Result<(ArchSpec, String), Failure> {
    match (&a.arch, &a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::new(2, format!("cannot read architecture file {}: {e}", path.display())))?;
            let spec = parse(&text).map_err(|e| Failure::new(exit_code(&e), format!("{}: {e}", path.display())))?;
            Ok((spec, path.display().to_string()))
        }
        (None, Some(name)) => Ok((resolve_preset(name)?, format!("preset:{name}"))),
        (None, None) => Err(Failure::new(2, "one of --arch or --preset is required")),
    }
}

fn load_split(kind: DatasetKind, dir: &Path, split: Split) -> simpnet::Result<Dataset> {
    match kind {
        DatasetKind::Mnist => load_mnist_dir(dir, split),
        DatasetKind::Cifar10 => load_cifar10_dir(dir, split),
    }
}

struct Loaded {
    train: Dataset,
    test: Dataset,
    stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Both splits, standardized with statistics of the full training split.
fn load_data(d: &DataArgs) -> Result<Loaded, Failure> {
    if !d.data_dir.is_dir() {
        return Err(Failure::new(3, format!("data directory {} does not exist", d.data_dir.display())));
    }
    let mut train = load_split(d.dataset, &d.data_dir, Split::Train)?;
    let mut test = load_split(d.dataset, &d.data_dir, Split::Test)?;
    let stats = if d.no_normalize {
        None
    } else {
        let (mean, std) = train.normalize()?;
        test.normalize_with(&mean, &std)?;
        Some((mean, std))
    };
    Ok(Loaded { train, test, stats })
}

fn stats_json(stats: &Option<(Vec<f64>, Vec<f64>)>) -> serde_json::Value {
    match stats {
        Some((mean, std)) => json!({ "mean": mean, "std": std }),
        None => serde_json::Value::Null,
    }
}

/// Presets follow the dataset; architecture files must already match it.
fn fit_to_data(spec: ArchSpec, from_preset: bool, data: &Dataset) -> Result<ArchSpec, Failure> {
    let input = data.image_shape();
    let k = data.meta.num_classes;
    let spec = if from_preset {
        spec.with_input(input).with_num_classes(k)?
    } else {
        if spec.input != input {
            return Err(Failure::new(
                2,
                format!("architecture expects input {} but {} images are {input}", spec.input, data.meta.name),
            ));
        }
        if spec.num_classes() != Some(k) {
            return Err(Failure::new(
                2,
                format!("architecture ends in {:?} outputs but {} has {k} classes", spec.num_classes(), data.meta.name),
            ));
        }
        spec
    };
    spec.resolve()?;
    Ok(spec)
}

fn augment_policy(kind: DatasetKind, input: ImageShape) -> AugmentPolicy {
    let crop = input.h.min(input.w);
    match kind {
        // Digits are not mirror symmetric.
        DatasetKind::Mnist => AugmentPolicy { pad: 2, crop, mirror_p: 0.0 },
        DatasetKind::Cifar10 => AugmentPolicy { pad: 4, crop, mirror_p: 0.5 },
    }
}

fn train_config(o: &OptimArgs, kind: DatasetKind, input: ImageShape) -> TrainConfig {
    TrainConfig {
        batch_size: o.batch_size,
        lr: o.lr,
        momentum: o.momentum,
        weight_decay: o.wd,
        seed: o.seed,
        deterministic: o.deterministic,
        max_steps: o.max_steps,
        augment: o.augment.then(|| augment_policy(kind, input)),
        eval_batch_size: o.eval_batch_size,
        ..TrainConfig::new(o.epochs)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(3, format!("cannot create {}: {e}", path.display())))
}

fn train(a: TrainArgs) -> CmdResult {
    let (spec, source) = resolve_arch(&a.arch)?;
    let data = load_data(&a.data)?;
    let train = match a.data.subset {
        Some(n) => data.train.subset(n)?,
        None => data.train,
    };
    let spec = fit_to_data(spec, a.arch.preset.is_some(), &train)?;
    let cfg = train_config(&a.optim, a.data.dataset, train.image_shape());
    cfg.validate()?;
    let mut model = spec.build::<f32>(cfg.seed)?;
    echo(json!({
        "command": "train",
        "arch": spec.name,
        "source": source,
        "input": spec.input,
        "params": model.num_params(),
        "dataset": train.meta.name,
        "data_dir": a.data.data_dir,
        "train_size": train.len(),
        "test_size": data.test.len(),
        "normalization": stats_json(&data.stats),
        "train": cfg,
        "out_metrics": a.out_metrics,
        "out_ckpt": a.out_ckpt,
    }));

    let mut csv = create(&a.out_metrics)?;
    writeln!(csv, "{METRICS_HEADER}").map_err(Error::from)?;
    let result = train_loop(&mut model, &train, Some(&data.test), &cfg, &mut |row| {
        eprintln!(
            "epoch {} step {} {}: loss {:.4} top1 {:.4} lr {}",
            row.epoch,
            row.step,
            row.split,
            row.loss,
            row.top1,
            row.lr
        );
        writeln!(csv, "{}", row.csv_line())?;
        csv.flush()?;
        Ok(())
    });
    csv.flush().map_err(Error::from)?;
    match result {
        Ok(summary) => {
            model.save_checkpoint(&a.out_ckpt)?;
            let last = summary.rows.last();
            println!(
                "trained {} steps; final {} loss {} top1 {}",
                summary.steps,
                last.map_or("-".to_string(), |r| r.split.to_string()),
                last.map_or(f64::NAN, |r| r.loss),
                last.map_or(f64::NAN, |r| r.top1)
            );
            println!("metrics: {}\ncheckpoint: {}", a.out_metrics.display(), a.out_ckpt.display());
            Ok(0)
        }
        Err(e) if exit_code(&e) == 4 => {
            // The loop hands back the last finite state.
            let saved = model.save_checkpoint(&a.out_ckpt);
            let note = match saved {
                Ok(()) => format!("last good checkpoint written to {}", a.out_ckpt.display()),
                Err(s) => format!("could not save last good checkpoint: {s}"),
            };
            Err(Failure::new(4, format!("numerical abort: {e}; {note}")))
        }
        Err(e) => Err(e.into()),
    }
}

fn eval(a: EvalArgs) -> CmdResult {
    let (spec, source) = resolve_arch(&a.arch)?;
    let data = load_data(&a.data)?;
    let split = match a.split {
        SplitArg::Train => data.train,
        SplitArg::Test => data.test,
    };
    let split = match a.data.subset {
        Some(n) => split.subset(n)?,
        None => split,
    };
    let spec = fit_to_data(spec, a.arch.preset.is_some(), &split)?;
    let mut model = spec.build::<f32>(0)?;
    model.load_checkpoint(&a.ckpt)?;
    echo(json!({
        "command": "eval",
        "arch": spec.name,
        "source": source,
        "input": spec.input,
        "params": model.num_params(),
        "ckpt": a.ckpt,
        "dataset": split.meta.name,
        "data_dir": a.data.data_dir,
        "size": split.len(),
        "normalization": stats_json(&data.stats),
        "batch_size": a.batch_size,
    }));
    let (loss, top1) = evaluate(&mut model, &split, a.batch_size)?;
    println!("{} examples: loss {loss:.6} top1 {top1:.6}", split.len());
    Ok(0)
}

fn analyze(a: AnalyzeArgs) -> CmdResult {
    // A bare multi-arm experiment name audits every arm.
    let arms: Vec<(String, ArchSpec)> = match (&a.arch.preset, &a.arch.arch) {
        (Some(name), None) if !name.contains('/') => {
            let p = preset(name)?;
            if p.arms.len() == 1 {
                vec![(name.clone(), p.arms[0].spec.clone())]
            } else {
                p.arms.into_iter().map(|arm| (format!("{name}/{}", arm.name), arm.spec)).collect()
            }
        }
        _ => {
            let (spec, source) = resolve_arch(&a.arch)?;
            vec![(source, spec)]
        }
    };
    let input = match a.input.as_deref() {
        Some(&[c, h, w]) if c > 0 && h > 0 && w > 0 => Some(ImageShape { c, h, w }),
        Some(dims) => return Err(Failure::new(2, format!("--input needs three positive sizes, got {dims:?}"))),
        None => None,
    };
    let cfg = AuditConfig::default();
    echo(json!({
        "command": "analyze",
        "sources": arms.iter().map(|(s, _)| s).collect::<Vec<_>>(),
        "input": input,
        "audit": cfg,
    }));
    let mut collapsed = Vec::new();
    for (i, (source, spec)) in arms.iter().enumerate() {
        let report = audit(spec, input.unwrap_or(spec.input), &cfg);
        match a.format {
            ReportFormat::Table => {
                if i > 0 {
                    println!();
                }
                if arms.len() > 1 {
                    println!("== {source}");
                }
                print!("{report}");
            }
            ReportFormat::Records => print!("{}", report.records()),
        }
        if let Some(c) = &report.collapse {
            collapsed.push(format!("{source}: {c}"));
        }
    }
    if collapsed.is_empty() {
        Ok(0)
    } else {
        Err(Failure::new(5, format!("shape collapse, cannot build: {}", collapsed.join("; "))))
    }
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let cfg = GradcheckConfig {
        seed: a.seed,
        instances: a.instances,
        layer: a.layer,
        broken: a.inject_broken_layer,
        ..GradcheckConfig::default()
    };
    echo(json!({
        "command": "gradcheck",
        "seed": cfg.seed,
        "instances": cfg.instances,
        "h": cfg.h,
        "tolerance": cfg.tolerance,
        "layer": cfg.layer,
        "broken": cfg.broken,
    }));
    let report = run_gradcheck(&cfg)?;
    print!("{report}");
    if report.passed() {
        return Ok(0);
    }
    for (layer, worst) in report.failures() {
        eprintln!(
            "gradient check failed: layer {layer}, instance seed {}, relative error {:e}",
            worst.instance_seed, worst.rel_err
        );
    }
    Ok(1)
}

fn ablate_cmd(a: AblateArgs) -> CmdResult {
    // Unknown names are refused before touching any data.
    let p = preset(&a.preset)?;
    let data = load_data(&a.data)?;
    let train = match a.data.subset {
        Some(n) => data.train.subset(n)?,
        None => data.train,
    };
    let input = train.image_shape();
    let p = p.with_input(input).with_num_classes(train.meta.num_classes)?;
    let cfg = AblationConfig {
        train: train_config(&a.optim, a.data.dataset, input),
        seeds: a.seeds,
        tolerance: a.tolerance,
        probe_size: a.probe_size,
    };
    let out = a.out_records.clone().unwrap_or_else(|| PathBuf::from(format!("ablate-{}.tsv", p.name)));
    echo(json!({
        "command": "ablate",
        "preset": p.name,
        "arms": p.arms.iter().map(|arm| json!({
            "arm": arm.name,
            "budget": arm.budget,
            "params": arm.spec.param_count().ok(),
        })).collect::<Vec<_>>(),
        "dataset": train.meta.name,
        "data_dir": a.data.data_dir,
        "train_size": train.len(),
        "test_size": data.test.len(),
        "normalization": stats_json(&data.stats),
        "ablation": cfg,
        "out_records": out,
    }));
    let report = ablate(&p, &train, &data.test, &cfg, &mut |arm, seed, row| {
        eprintln!(
            "{arm} seed {seed}: epoch {} step {} {}: loss {:.4} top1 {:.4}",
            row.epoch, row.step, row.split, row.loss, row.top1
        );
    })?;
    let mut w = create(&out)?;
    w.write_all(report.records().as_bytes()).and_then(|_| w.flush()).map_err(Error::from)?;
    print!("{report}");
    println!("records: {}", out.display());
    Ok(0)
}
