//! Regenerates the width-solved architecture files under `configs/`.
//!
//! `cargo run -p simpnet-core --example gen_presets -- crates/core/configs`

use simpnet::archdsl::{scale_to_budget, ConvStack, Downsample, SimpNetOptions, SIMPNET_BASE_WIDTHS};
use simpnet::ImageShape;

fn geometric(n: usize, from: f64, to: f64) -> Vec<usize> {
    (0..n)
        .map(|i| (from * (to / from).powf(i as f64 / (n - 1) as f64)).round() as usize)
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "crates/core/configs".into());
    std::fs::create_dir_all(&dir)?;
    let cifar = ImageShape::new(3, 32, 32);
    let mnist = ImageShape::new(1, 28, 28);
    // Experiment arms train for a couple of epochs; per-conv dropout ahead of
    // every batch norm leaves running statistics far off the eval-mode
    // activations at that horizon, so the arms go without it.
    let desk = SimpNetOptions {
        conv_dropout_p: 0.0,
        ..Default::default()
    };
    let plain = SimpNetOptions {
        downsample: Downsample::MaxPool,
        ..desk
    };
    let simp = |name: &str, input, options| ConvStack::new(name, input, SIMPNET_BASE_WIDTHS.to_vec(), vec![5, 10], options);

    let mut jobs: Vec<(String, ConvStack, usize)> = vec![
        (
            "simpnet-tiny".into(),
            ConvStack::new(
                "simpnet-tiny",
                mnist,
                vec![16, 16, 16, 24, 24, 32, 32, 32, 32, 48, 48, 64, 80],
                vec![5, 10],
                SimpNetOptions {
                    conv_dropout_p: 0.1,
                    ..Default::default()
                },
            ),
            100_000,
        ),
        ("simpnet-300k".into(), simp("simpnet-300k", cifar, SimpNetOptions::default()), 300_000),
        ("simpnet-600k".into(), simp("simpnet-600k", cifar, SimpNetOptions::default()), 600_000),
        ("simpnet-5m".into(), simp("simpnet-5m", cifar, SimpNetOptions::default()), 5_480_000),
        ("maxpool-vs-sconv.maxpool".into(), simp("simpnet-maxpool", cifar, plain), 360_000),
        (
            "maxpool-vs-sconv.sconv".into(),
            simp(
                "simpnet-sconv",
                cifar,
                SimpNetOptions {
                    downsample: Downsample::StridedConv,
                    ..desk
                },
            ),
            360_000,
        ),
        ("saf-vs-plain.saf".into(), simp("simpnet-saf", cifar, desk), 300_000),
        ("saf-vs-plain.maxpool".into(), simp("simpnet-plain", cifar, plain), 300_000),
    ];
    for (n, pools) in [(8, vec![3, 6]), (9, vec![3, 7]), (10, vec![4, 8]), (13, vec![5, 10])] {
        let name = format!("arch1-depth.d{n}");
        jobs.push((name.clone(), ConvStack::new(name, cifar, geometric(n, 32.0, 96.0), pools, plain), 300_000));
    }
    jobs.push((
        "shallow-vs-deep.shallow".into(),
        ConvStack::new("arch1-shallow", cifar, geometric(6, 32.0, 96.0), vec![3, 5], plain),
        1_100_000,
    ));
    jobs.push((
        "shallow-vs-deep.deep".into(),
        ConvStack::new("arch1-deep", cifar, geometric(13, 32.0, 96.0), vec![5, 10], plain),
        570_000,
    ));
    for (tag, budget) in [("8m", 8_000_000), ("128k", 128_000)] {
        let mut wide = vec![16; 12];
        wide.push(256);
        jobs.push((
            format!("balanced-vs-wide-end-{tag}.balanced"),
            ConvStack::new(format!("arch2-balanced-{tag}"), cifar, geometric(13, 32.0, 96.0), vec![5, 10], plain),
            budget,
        ));
        jobs.push((
            format!("balanced-vs-wide-end-{tag}.wide-end"),
            ConvStack::new(format!("arch2-wide-end-{tag}"), cifar, wide, vec![5, 10], plain),
            budget,
        ));
    }
    for l in [3, 5, 7] {
        let name = format!("pool-placement.l{l}");
        jobs.push((name.clone(), ConvStack::new(name, cifar, geometric(10, 16.0, 48.0), vec![l], plain), 53_000));
    }
    let arch4 = |name: &str, kernels: Vec<usize>| {
        ConvStack::new(format!("arch4-{name}"), cifar, geometric(8, 32.0, 96.0), vec![3, 6], plain).with_kernels(kernels)
    };
    for (arm, kernels, budget) in [
        ("k3-300k", vec![3; 8], 300_000),
        ("k3-1.6m", vec![3; 8], 1_600_000),
        ("k5-1.6m", vec![5; 8], 1_600_000),
        ("k7-300k-v1", vec![7; 8], 300_000),
        ("k7-300k-v2", vec![7, 7, 7, 7, 3, 3, 3, 3], 300_000),
        ("k7-1.6m", vec![7; 8], 1_600_000),
    ] {
        jobs.push((format!("kernel-size.{arm}"), arch4(arm, kernels), budget));
    }

    for (file, stack, budget) in jobs {
        let solved = scale_to_budget(&stack, budget, 0.005)?;
        let spec = solved.spec()?;
        let text = format!("# budget {budget}\n{}", spec.render());
        std::fs::write(format!("{dir}/{file}.arch"), text)?;
        println!("{file:<40} {:>9} {:?}", spec.param_count()?, solved.widths);
    }
    Ok(())
}
