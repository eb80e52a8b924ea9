//! Per-layer forward/backward wall time for a preset on random input.
//!
//! `cargo run --release -p simpnet-core --example layer_timing -- simpnet-tiny 128`

use std::time::Instant;

use simpnet::archdsl::resolve_preset;
use simpnet::layers::Mode;
use simpnet::{CounterRng, Tensor4};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("simpnet-tiny");
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(128);
    let spec = resolve_preset(name).expect("preset");
    let mut model = spec.build::<f32>(0).expect("build");
    let rng = CounterRng::new(0);
    let mut x = Tensor4::fill_random_uniform(spec.input.batch(batch).unwrap(), 0.0, 1.0, &rng).unwrap();
    let mut caches = Vec::new();
    let mut fwd = Vec::new();
    for (i, node) in model.nodes_mut().iter_mut().enumerate() {
        let t = Instant::now();
        let (y, c) = node.layer.forward(x, Mode::Train, &rng.split(i as u64)).unwrap();
        fwd.push(t.elapsed());
        caches.push(c);
        x = y;
    }
    let mut g = x.map(|_| 1e-3);
    let mut bwd = vec![std::time::Duration::ZERO; caches.len()];
    for (i, node) in model.nodes_mut().iter_mut().enumerate().rev() {
        let t = Instant::now();
        g = node.layer.backward(&caches[i], &g).unwrap();
        bwd[i] = t.elapsed();
    }
    let (mut tf, mut tb) = (0.0, 0.0);
    for (i, node) in model.nodes().iter().enumerate() {
        println!("{:<10} fwd {:>8.2} ms  bwd {:>8.2} ms", node.name, fwd[i].as_secs_f64() * 1e3, bwd[i].as_secs_f64() * 1e3);
        tf += fwd[i].as_secs_f64();
        tb += bwd[i].as_secs_f64();
    }
    println!("total fwd {:.1} ms, bwd {:.1} ms, {:.0} samples/s", tf * 1e3, tb * 1e3, batch as f64 / (tf + tb));
}
