use hypdis_core::eval::evaluate_checkpoint;
use hypdis_core::layers::ModelDims;
use hypdis_core::synthetic::{generate, SyntheticConfig};
use hypdis_core::trainer::{train, Task, TrainConfig, Variant};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = Variant::parse(args.get(1).map(|s| s.as_str()).unwrap_or("full")).unwrap();
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(600);
    let patience: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(150);
    let g = generate(&SyntheticConfig { seed: 1, ..Default::default() }).unwrap();
    let cfg = TrainConfig {
        task: Task::LinkPrediction,
        variant, lr,
        dims: ModelDims { d0: 32, hidden: vec![32, 32] },
        seed: 0, max_epochs: epochs, patience,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let out = train(&g, &cfg).unwrap();
    let rep = evaluate_checkpoint(&g, &out.checkpoint, 3, 99, true).unwrap();
    let fused = &rep.rows[0];
    println!(
        "{:>18} lr={lr}: epochs={} best_val={:.4}@{} test_auc={:.4} time={:.0}s",
        variant.name(), out.history.len(), out.checkpoint.best_metric, out.checkpoint.best_epoch,
        fused.primary_mean, t0.elapsed().as_secs_f64()
    );
}
