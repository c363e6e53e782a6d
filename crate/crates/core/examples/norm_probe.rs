use hypdis_core::synthetic::{generate, SyntheticConfig};
use hypdis_core::trainer::{train, infer_embeddings, Task, TrainConfig, Variant};
use hypdis_core::layers::ModelDims;

fn main() {
    let g = generate(&SyntheticConfig { seed: 1, ..Default::default() }).unwrap();
    let cfg = TrainConfig {
        task: Task::LinkPrediction,
        variant: Variant::Full,
        dims: ModelDims { d0: 32, hidden: vec![32, 32] },
        seed: 0, max_epochs: 30, patience: 1000,
        ..Default::default()
    };
    let out = train(&g, &cfg).unwrap();
    let emb = infer_embeddings(&out.checkpoint, &g).unwrap();
    let c = emb.curvature;
    for (name, m) in [("fused", Some(&emb.fused)), ("st", emb.structural.as_ref()), ("se", emb.semantic.as_ref())] {
        if let Some(m) = m {
            let norms: Vec<f64> = m.outer_iter().map(|r| (c.sqrt() * r.dot(&r).sqrt())).collect();
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            let sat = norms.iter().filter(|&&n| n > 0.99).count();
            let max = norms.iter().cloned().fold(0.0, f64::max);
            println!("{name:>6}: mean sqrt(c)||z|| = {mean:.4}, max = {max:.6}, saturated(>0.99) = {}/{}", sat, norms.len());
        }
    }
}
