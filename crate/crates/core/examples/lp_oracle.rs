use hypdis_core::eval::auc_ap;
use hypdis_core::hetgraph::sample::sample_negative_edges;
use hypdis_core::hetgraph::split::make_splits;
use hypdis_core::synthetic::{generate, SyntheticConfig};

fn main() {
    let cfg = SyntheticConfig { seed: 1, ..Default::default() };
    let g = generate(&cfg).unwrap();
    let splits = make_splits(&g, (0.5, 0.25, 0.25), 0).unwrap();
    // degree over TRAIN edges only (what a model could know)
    let mut deg = vec![0f64; g.node_count()];
    for rs in &splits.relations {
        for &(s, d) in &rs.train { deg[s] += 1.0; deg[d] += 1.0; }
    }
    let k = cfg.communities * cfg.subcommunities;
    let subc = |i: usize| -> usize {
        let n = g.nodes()[i].id[1..].parse::<usize>().unwrap();
        let total = match &g.nodes()[i].id[..1] { "a" => cfg.nodes_a, "b" => cfg.nodes_b, _ => cfg.nodes_c };
        n * k / total
    };
    let mut pos = Vec::new();
    for (ri, rs) in splits.relations.iter().enumerate() {
        for &(s, d) in &rs.test { pos.push((ri, s, d)); }
    }
    let neg = sample_negative_edges(&g, &pos, 1, 99);
    let plausible = |s: usize, d: usize| -> f64 {
        let (ss, ds) = (subc(s), subc(d));
        if ds == ss || ds == (ss + cfg.subcommunities) % k || ss == (ds + cfg.subcommunities) % k { 1.0 } else { 0.0 }
    };
    for (name, f) in [
        ("deg(dst) only", Box::new(|_s: usize, d: usize| deg[d]) as Box<dyn Fn(usize,usize)->f64>),
        ("rule only", Box::new(|s: usize, d: usize| plausible(s, d))),
        ("rule + deg", Box::new(|s: usize, d: usize| plausible(s, d) * 1000.0 + deg[d] + deg[s])),
    ] {
        let scores: Vec<f64> = pos.iter().map(|&(_, s, d)| f(s, d)).chain(neg.iter().map(|&(_, s, d)| f(s, d))).collect();
        let labels: Vec<bool> = (0..pos.len()).map(|_| true).chain((0..neg.len()).map(|_| false)).collect();
        let (auc, ap) = auc_ap(&scores, &labels);
        println!("{name:>14}: AUC {auc:.4} AP {ap:.4}");
    }
}
