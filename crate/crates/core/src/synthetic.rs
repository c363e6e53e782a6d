//! Seeded heterogeneous benchmark generator.
//!
//! Builds a three-type graph with planted communities, hub-like power-law
//! degree skew and relation-dependent semantics. Each community splits into
//! subcommunities; attachment follows subcommunity-level rules so edges are
//! predictable from structure, with a different rule per relation:
//!
//! - `ab_core`: ties within the matched subcommunity.
//! - `ab_weak`: ties into the matched subcommunity of the next community,
//!   sharing the `(a,b)` endpoint signature with `ab_core` so edge-type
//!   reassignment has a valid target and scrambling types genuinely
//!   destroys information.
//! - `bc`: items attach to the few hub nodes of their subcommunity.
//!
//! Node labels are the planted community of the `a` type. Features are noisy
//! community indicators plus noise dimensions, same arity for every type.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hetgraph::{GraphBuilder, HetGraph};
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub nodes_a: usize,
    pub nodes_b: usize,
    pub nodes_c: usize,
    pub communities: usize,
    /// Subcommunities per community (attachment granularity).
    pub subcommunities: usize,
    pub feature_dim: usize,
    /// Probability that a node's indicator marks the wrong community.
    pub feature_flip: f64,
    pub feature_noise: f64,
    /// Amplitude of the identity-bearing noise dimensions (what lets an
    /// encoder tell nodes of one subcommunity apart).
    pub id_noise: f64,
    /// Mean attachment counts per node and relation.
    pub ab_core_degree: usize,
    pub ab_weak_degree: usize,
    pub bc_degree: usize,
    /// Probability that an edge ignores the planted structure.
    pub cross_ratio: f64,
    /// Pareto exponent for hub weights.
    pub pareto_alpha: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            nodes_a: 300,
            nodes_b: 300,
            nodes_c: 100,
            communities: 3,
            subcommunities: 3,
            feature_dim: 8,
            feature_flip: 0.25,
            feature_noise: 0.3,
            id_noise: 1.0,
            ab_core_degree: 4,
            ab_weak_degree: 2,
            bc_degree: 2,
            cross_ratio: 0.1,
            pareto_alpha: 2.0,
            seed: 0,
        }
    }
}

struct WeightedPool {
    items: Vec<usize>,
    prefix: Vec<f64>,
}

impl WeightedPool {
    fn new(items: Vec<usize>, weights: &[f64]) -> Self {
        let mut prefix = Vec::with_capacity(items.len());
        let mut acc = 0.0;
        for &i in &items {
            acc += weights[i];
            prefix.push(acc);
        }
        WeightedPool { items, prefix }
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.prefix.last().expect("non-empty pool");
        let x = rng.gen_range(0.0..total);
        let at = self.prefix.partition_point(|&p| p <= x);
        self.items[at.min(self.items.len() - 1)]
    }
}

fn pareto_weight(rng: &mut ChaCha8Rng, alpha: f64) -> f64 {
    let u: f64 = rng.gen_range(0.0..1.0);
    (1.0 - u).powf(-1.0 / (alpha - 1.0)).min(50.0)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<HetGraph> {
    let mut rng = rng_from(&[cfg.seed, tag::SYNTH]);
    let k = cfg.communities;
    let s_total = k * cfg.subcommunities;

    let comm = |i: usize, n: usize| -> usize { i * k / n };
    let sub = |i: usize, n: usize| -> usize { i * s_total / n };
    let mut b = GraphBuilder::default();

    // nodes + labels on type `a`
    for i in 0..cfg.nodes_a {
        b.nodes.push((
            format!("a{i:04}"),
            "a".into(),
            Some(format!("c{}", comm(i, cfg.nodes_a))),
        ));
    }
    for i in 0..cfg.nodes_b {
        b.nodes.push((format!("b{i:04}"), "b".into(), None));
    }
    for i in 0..cfg.nodes_c {
        b.nodes.push((format!("c{i:04}"), "c".into(), None));
    }

    // hub weights
    let w_b: Vec<f64> = (0..cfg.nodes_b)
        .map(|_| pareto_weight(&mut rng, cfg.pareto_alpha))
        .collect();
    let w_c: Vec<f64> = (0..cfg.nodes_c)
        .map(|_| pareto_weight(&mut rng, cfg.pareto_alpha))
        .collect();

    let b_by_sub: Vec<WeightedPool> = (0..s_total)
        .map(|s| {
            let items: Vec<usize> = (0..cfg.nodes_b)
                .filter(|&i| sub(i, cfg.nodes_b) == s)
                .collect();
            WeightedPool::new(items, &w_b)
        })
        .collect();
    let b_all = WeightedPool::new((0..cfg.nodes_b).collect(), &w_b);
    let c_by_sub: Vec<WeightedPool> = (0..s_total)
        .map(|s| {
            let items: Vec<usize> = (0..cfg.nodes_c)
                .filter(|&i| sub(i, cfg.nodes_c) == s)
                .collect();
            WeightedPool::new(items, &w_c)
        })
        .collect();

    let push_edge = |edges: &mut Vec<(String, String, String, bool)>,
                     src: String,
                     dst: String,
                     rel: &str| {
        edges.push((src, dst, rel.to_string(), true));
    };

    let mut edges = Vec::new();
    for i in 0..cfg.nodes_a {
        let s = sub(i, cfg.nodes_a);
        // core ties stay in the matched subcommunity
        let deg = 1 + rng.gen_range(0..=cfg.ab_core_degree.saturating_sub(1).max(1));
        for _ in 0..deg {
            let j = if rng.gen_range(0.0..1.0) < cfg.cross_ratio {
                b_all.pick(&mut rng)
            } else {
                b_by_sub[s].pick(&mut rng)
            };
            push_edge(&mut edges, format!("a{i:04}"), format!("b{j:04}"), "ab_core");
        }
        // weak ties follow the matched subcommunity of the next community
        let weak_target = (s + cfg.subcommunities) % s_total;
        let weak = rng.gen_range(0..=cfg.ab_weak_degree);
        for _ in 0..weak {
            let j = if rng.gen_range(0.0..1.0) < cfg.cross_ratio {
                b_all.pick(&mut rng)
            } else {
                b_by_sub[weak_target].pick(&mut rng)
            };
            push_edge(&mut edges, format!("a{i:04}"), format!("b{j:04}"), "ab_weak");
        }
    }
    for i in 0..cfg.nodes_b {
        let s = sub(i, cfg.nodes_b);
        let deg = 1 + rng.gen_range(0..=cfg.bc_degree.saturating_sub(1).max(1));
        for _ in 0..deg {
            let j = c_by_sub[s].pick(&mut rng);
            push_edge(&mut edges, format!("b{i:04}"), format!("c{j:04}"), "bc");
        }
    }
    b.edges = edges;

    // features: noisy community indicator + noise dims, same arity everywhere
    let mut feature_rows = |prefix: &str, n: usize| -> Vec<(String, Vec<f64>)> {
        (0..n)
            .map(|i| {
                let c = comm(i, n);
                let observed = if rng.gen_range(0.0..1.0) < cfg.feature_flip {
                    rng.gen_range(0..k)
                } else {
                    c
                };
                let mut row = vec![0.0; cfg.feature_dim];
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = if j < k {
                        let base = if j == observed { 1.0 } else { 0.0 };
                        base + cfg.feature_noise * rng.gen_range(-1.0..1.0)
                    } else {
                        cfg.id_noise * rng.gen_range(-1.0..1.0)
                    };
                }
                (format!("{prefix}{i:04}"), row)
            })
            .collect()
    };
    b.features.insert("a".into(), feature_rows("a", cfg.nodes_a));
    b.features.insert("b".into(), feature_rows("b", cfg.nodes_b));
    b.features.insert("c".into(), feature_rows("c", cfg.nodes_c));

    b.build()
}

/// Community of every node, keyed by node id, for test oracles.
pub fn planted_communities(g: &HetGraph, cfg: &SyntheticConfig) -> Vec<usize> {
    let k = cfg.communities;
    g.nodes()
        .iter()
        .map(|n| {
            let i: usize = n.id[1..].parse().expect("synthetic id");
            let total = match &n.id[..1] {
                "a" => cfg.nodes_a,
                "b" => cfg.nodes_b,
                _ => cfg.nodes_c,
            };
            i * k / total
        })
        .collect()
}

/// Feature matrices stacked in canonical node order (test convenience).
pub fn stacked_features(g: &HetGraph) -> Array2<f64> {
    let dim = g.features(0).map(|f| f.ncols()).unwrap_or(0);
    let mut out = Array2::zeros((g.node_count(), dim));
    for ty in 0..g.type_count() {
        if let Some(f) = g.features(ty) {
            let range = g.type_range(ty);
            out.slice_mut(ndarray::s![range.start..range.end, ..]).assign(f);
        }
    }
    out
}
