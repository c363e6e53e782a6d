use hypdis_core::synthetic::{generate, SyntheticConfig};
use hypdis_core::trainer::{train, Task, TrainConfig, Variant};
use hypdis_core::layers::ModelDims;
use hypdis_core::eval::evaluate_checkpoint;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task = if args.get(1).map(|s| s.as_str()) == Some("lp") { Task::LinkPrediction } else { Task::NodeClassification };
    let variant = match args.get(2).map(|s| s.as_str()) {
        Some(v) => Variant::parse(v).unwrap(),
        None => Variant::Full,
    };
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let max_epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(400);

    let g = generate(&SyntheticConfig { seed: 1, ..Default::default() }).unwrap();
    let cfg = TrainConfig {
        task,
        variant,
        dims: ModelDims { d0: 32, hidden: vec![32, 32] },
        seed,
        max_epochs,
        patience: 50,
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = train(&g, &cfg).unwrap();
    let dt = t0.elapsed();
    let last = out.history.last().unwrap();
    println!("epochs={} time={:.1}s per_epoch={:.0}ms best_val={:.4} at {}",
        out.history.len(), dt.as_secs_f64(), dt.as_secs_f64()*1000.0/out.history.len() as f64,
        out.checkpoint.best_metric, out.checkpoint.best_epoch);
    let rep = evaluate_checkpoint(&g, &out.checkpoint, 3, 99, true).unwrap();
    println!("{}", rep.to_text_table());
}
// (history dump appended by a second binary would be overkill; see bench_hist)
