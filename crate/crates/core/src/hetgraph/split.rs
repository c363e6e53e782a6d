//! Deterministic train/val/test splits, proportional per edge type.

use log::warn;
use rand::seq::SliceRandom;

use crate::error::{CoreError, Result};
use crate::hetgraph::HetGraph;
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RelationSplit {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSplit {
    /// Global node indices.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSet {
    /// Indexed like `HetGraph::relations`.
    pub relations: Vec<RelationSplit>,
    pub labels: Option<LabelSplit>,
}

fn check_ratios(ratios: (f64, f64, f64)) -> Result<()> {
    let s = ratios.0 + ratios.1 + ratios.2;
    if (s - 1.0).abs() > 1e-9 || ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(CoreError::Config(format!("split ratios must sum to 1: {ratios:?}")));
    }
    Ok(())
}

fn counts(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let n_val = (ratios.1 * n as f64).round() as usize;
    let n_test = (ratios.2 * n as f64).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    (n_train, n_val, n_test)
}

/// Split every relation's edges into train/val/test with the given ratios.
/// Relations with fewer than 4 edges go entirely to train.
pub fn split_edges(g: &HetGraph, ratios: (f64, f64, f64), seed: u64) -> Result<SplitSet> {
    check_ratios(ratios)?;
    let mut relations = Vec::with_capacity(g.relations().len());
    for (ri, r) in g.relations().iter().enumerate() {
        let mut edges = r.edges.clone();
        if edges.len() < 4 {
            warn!(
                "relation {} has {} edges (<4); assigning all to train",
                r.name,
                edges.len()
            );
            relations.push(RelationSplit {
                train: edges,
                val: Vec::new(),
                test: Vec::new(),
            });
            continue;
        }
        let mut rng = rng_from(&[seed, tag::SPLIT_EDGES, ri as u64]);
        edges.shuffle(&mut rng);
        let (n_train, n_val, _) = counts(edges.len(), ratios);
        let test = edges.split_off(n_train + n_val);
        let val = edges.split_off(n_train);
        relations.push(RelationSplit {
            train: edges,
            val,
            test,
        });
    }
    Ok(SplitSet {
        relations,
        labels: None,
    })
}

/// Split the labeled node set with the given ratios.
pub fn split_labels(g: &HetGraph, ratios: (f64, f64, f64), seed: u64) -> Result<LabelSplit> {
    check_ratios(ratios)?;
    let mut nodes = g.labeled_nodes();
    if nodes.is_empty() {
        return Err(CoreError::GraphData("graph has no labeled nodes".into()));
    }
    let mut rng = rng_from(&[seed, tag::SPLIT_LABELS]);
    nodes.shuffle(&mut rng);
    let (n_train, n_val, _) = counts(nodes.len(), ratios);
    let test = nodes.split_off(n_train + n_val);
    let val = nodes.split_off(n_train);
    Ok(LabelSplit {
        train: nodes,
        val,
        test,
    })
}

/// Edge and (when present) label splits in one set.
pub fn make_splits(g: &HetGraph, ratios: (f64, f64, f64), seed: u64) -> Result<SplitSet> {
    let mut s = split_edges(g, ratios, seed)?;
    if !g.labeled_nodes().is_empty() {
        s.labels = Some(split_labels(g, ratios, seed)?);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::GraphBuilder;

    fn chain_graph(n_edges: usize) -> HetGraph {
        let mut b = GraphBuilder::default();
        for i in 0..=n_edges {
            let ty = if i % 2 == 0 { "even" } else { "odd" };
            b.nodes.push((format!("n{i}"), ty.into(), None));
        }
        for i in 0..n_edges {
            b.edges
                .push((format!("n{i}"), format!("n{}", i + 1), "next".into(), false));
        }
        b.build().unwrap()
    }

    #[test]
    fn exact_quarters_on_100() {
        let g = chain_graph(100);
        let s = split_edges(&g, (0.5, 0.25, 0.25), 7).unwrap();
        // "next" bucketed by endpoint types: even->odd and odd->even
        let total: usize = s
            .relations
            .iter()
            .map(|r| r.train.len() + r.val.len() + r.test.len())
            .sum();
        assert_eq!(total, 100);
        for r in &s.relations {
            let n = r.train.len() + r.val.len() + r.test.len();
            assert!((r.val.len() as f64 - 0.25 * n as f64).abs() <= 1.0);
            assert!((r.test.len() as f64 - 0.25 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn alibaba_sized_relation_counts() {
        // 25,180 edges at 50/25/25 -> 12,590 / 6,295 / 6,295
        assert_eq!(counts(25_180, (0.5, 0.25, 0.25)), (12_590, 6_295, 6_295));
    }

    #[test]
    fn deterministic_and_disjoint() {
        let g = chain_graph(40);
        let a = split_edges(&g, (0.5, 0.25, 0.25), 9).unwrap();
        let b = split_edges(&g, (0.5, 0.25, 0.25), 9).unwrap();
        assert_eq!(a, b);
        let c = split_edges(&g, (0.5, 0.25, 0.25), 10).unwrap();
        assert_ne!(a, c);
        for (ri, r) in a.relations.iter().enumerate() {
            let mut all: Vec<(usize, usize)> = r
                .train
                .iter()
                .chain(&r.val)
                .chain(&r.test)
                .cloned()
                .collect();
            all.sort_unstable();
            let mut orig = g.relations()[ri].edges.clone();
            orig.sort_unstable();
            assert_eq!(all, orig, "union must equal the source set");
        }
    }

    #[test]
    fn tiny_relation_goes_to_train() {
        let g = chain_graph(3);
        let s = split_edges(&g, (0.5, 0.25, 0.25), 1).unwrap();
        for r in &s.relations {
            assert!(r.val.is_empty() && r.test.is_empty());
        }
    }

    #[test]
    fn bad_ratios_rejected() {
        let g = chain_graph(10);
        assert!(split_edges(&g, (0.5, 0.2, 0.2), 1).is_err());
    }
}
