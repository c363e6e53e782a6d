// can the concat-MLP link head learn the planted rule from ideal inputs?
use hypdis_core::autodiff::{AdamConfig, ParamStore, Tape};
use hypdis_core::eval::auc_ap;
use hypdis_core::geometry::Geometry;
use hypdis_core::hetgraph::sample::sample_negative_edges;
use hypdis_core::hetgraph::split::make_splits;
use hypdis_core::layers::BoundParams;
use hypdis_core::objectives::{self};
use hypdis_core::synthetic::{generate, SyntheticConfig};
use ndarray::Array2;

fn main() {
    let cfg = SyntheticConfig { seed: 1, ..Default::default() };
    let g = generate(&cfg).unwrap();
    let splits = make_splits(&g, (0.5, 0.25, 0.25), 0).unwrap();
    let k = cfg.communities * cfg.subcommunities;
    // ideal embedding: subcommunity one-hot + degree + type
    let mut deg = vec![0f64; g.node_count()];
    let mut train_pos = Vec::new();
    for (ri, rs) in splits.relations.iter().enumerate() {
        for &(s, d) in &rs.train { deg[s] += 1.0; deg[d] += 1.0; train_pos.push((ri, s, d)); }
    }
    let dim = k + 2;
    let mut z = Array2::zeros((g.node_count(), dim));
    for i in 0..g.node_count() {
        let n: usize = g.nodes()[i].id[1..].parse().unwrap();
        let total = match &g.nodes()[i].id[..1] { "a" => cfg.nodes_a, "b" => cfg.nodes_b, _ => cfg.nodes_c };
        z[(i, n * k / total)] = 1.0;
        z[(i, k)] = (deg[i] as f64).ln_1p() / 3.0;
        z[(i, k + 1)] = g.node_type(i) as f64 / 2.0;
    }
    let mut store = ParamStore::new();
    objectives::init_predictor_params(&mut store, dim, 32, 7);
    let adam = AdamConfig { lr: 0.01, ..Default::default() };
    let geo = Geometry::euclidean();
    let mut test_pos = Vec::new();
    for (ri, rs) in splits.relations.iter().enumerate() { for &(s, d) in &rs.test { test_pos.push((ri, s, d)); } }
    let test_neg = sample_negative_edges(&g, &test_pos, 1, 99);
    for step in 0..3001 {
        let neg = sample_negative_edges(&g, &train_pos, 1, 1000 + step as u64);
        let mut t = Tape::new();
        let bp = BoundParams::bind(&mut t, &store);
        let zc = t.constant(z.clone());
        let c = t.scalar(1.0);
        let pos_pairs: Vec<(usize, usize)> = train_pos.iter().map(|&(_, s, d)| (s, d)).collect();
        let neg_pairs: Vec<(usize, usize)> = neg.iter().map(|&(_, s, d)| (s, d)).collect();
        let pl = objectives::predictor_logits(&mut t, &geo, &bp, zc, c, &pos_pairs);
        let nl = objectives::predictor_logits(&mut t, &geo, &bp, zc, c, &neg_pairs);
        let loss = objectives::lp_loss(&mut t, pl, nl);
        let grads = t.backward(loss);
        store.adam_step(&bp.collect_grads(&grads), &adam);
        if step % 500 == 0 {
            let mut t2 = Tape::new();
            let bp2 = BoundParams::bind(&mut t2, &store);
            let zc2 = t2.constant(z.clone());
            let c2 = t2.scalar(1.0);
            let pairs: Vec<(usize, usize)> = test_pos.iter().chain(test_neg.iter()).map(|&(_, s, d)| (s, d)).collect();
            let logits = objectives::predictor_logits(&mut t2, &geo, &bp2, zc2, c2, &pairs);
            let scores: Vec<f64> = t2.value(logits).iter().cloned().collect();
            let labels: Vec<bool> = (0..test_pos.len()).map(|_| true).chain((0..test_neg.len()).map(|_| false)).collect();
            let (auc, _) = auc_ap(&scores, &labels);
            println!("step {step:4}: loss {:.4} test AUC {auc:.4}", t.scalar_value(loss));
        }
    }
}
