use hypdis_core::synthetic::{generate, SyntheticConfig};
use hypdis_core::trainer::{train, Task, TrainConfig, Variant};
use hypdis_core::layers::ModelDims;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task = if args.get(1).map(|s| s.as_str()) == Some("lp") { Task::LinkPrediction } else { Task::NodeClassification };
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(60);
    let g = generate(&SyntheticConfig { seed: 1, ..Default::default() }).unwrap();
    let cfg = TrainConfig {
        task, lr,
        variant: Variant::Full,
        dims: ModelDims { d0: 32, hidden: vec![32, 32] },
        seed: 0, max_epochs: epochs, patience: 1000,
        ..Default::default()
    };
    let out = train(&g, &cfg).unwrap();
    for r in out.history.iter() {
        if r.epoch % 5 == 0 || r.epoch < 8 {
            let c: Vec<String> = r.loss_components.iter().map(|(k,v)| format!("{k}={v:.3}")).collect();
            let curv: Vec<String> = r.curvatures.iter().filter(|(k,_)| k.as_str()=="curv.c0"||k.as_str()=="curv.cL").map(|(k,v)| format!("{k}={v:.3}")).collect();
            println!("ep {:3} loss {:8.4} val {:.4} | {} | {}", r.epoch, r.loss, r.val_metric, c.join(" "), curv.join(" "));
        }
    }
}
