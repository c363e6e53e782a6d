//! Edge perturbations for the contrastive view and the robustness harness.
//!
//! Structural perturbation keeps the node set and edge counts fixed: per edge
//! type, `round(p/2 * |E|)` edges are deleted and the same number of
//! type-valid non-edges inserted, so both contrastive views have comparable
//! density. Semantic perturbation reassigns edge types among relations with
//! the same endpoint signature, or node types uniformly.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::hetgraph::{GraphBuilder, HetGraph};
use crate::rng::{rng_from, tag};

/// A structurally perturbed copy of a graph.
#[derive(Debug, Clone)]
pub struct PerturbedView {
    pub graph: HetGraph,
    pub ratio: f64,
    pub seed: u64,
}

fn sample_absent_edges(
    rng: &mut ChaCha8Rng,
    g: &HetGraph,
    src_ty: usize,
    dst_ty: usize,
    present: &std::collections::BTreeSet<(usize, usize)>,
    count: usize,
) -> Vec<(usize, usize)> {
    let src_range = g.type_range(src_ty);
    let dst_range = g.type_range(dst_ty);
    let mut added = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut failures = 0usize;
    while out.len() < count && failures < 200 {
        let u = rng.gen_range(src_range.clone());
        let v = rng.gen_range(dst_range.clone());
        if u == v || present.contains(&(u, v)) || added.contains(&(u, v)) {
            failures += 1;
            continue;
        }
        failures = 0;
        added.insert((u, v));
        out.push((u, v));
    }
    if out.len() < count {
        warn!(
            "edge domain {}x{} nearly saturated: inserted {} of {count} requested",
            src_range.len(),
            dst_range.len(),
            out.len()
        );
    }
    out
}

/// Delete `round(p/2 * |E|)` edges per type and insert the same number of
/// type-valid non-edges. `p = 0` returns an identical graph.
pub fn perturb_edges(g: &HetGraph, p: f64, seed: u64) -> Result<PerturbedView> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CoreError::Config(format!("perturbation ratio {p} not in [0,1]")));
    }
    let mut edits: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (ri, r) in g.relations().iter().enumerate() {
        let k = (p / 2.0 * r.edges.len() as f64).round() as usize;
        if k == 0 {
            continue;
        }
        let mut rng = rng_from(&[seed, tag::PERTURB, ri as u64]);
        let mut edges = r.edges.clone();
        edges.shuffle(&mut rng);
        let kept: Vec<(usize, usize)> = edges[k..].to_vec();
        let present: std::collections::BTreeSet<(usize, usize)> =
            r.edges.iter().cloned().collect();
        let mut new_edges = kept;
        new_edges.extend(sample_absent_edges(
            &mut rng, g, r.src_ty, r.dst_ty, &present, k,
        ));
        edits.insert(ri, new_edges);
    }
    Ok(PerturbedView {
        graph: g.with_relation_edges(&edits),
        ratio: p,
        seed,
    })
}

/// Structural robustness perturbation: add `round(ratio/2 * |E|)` and delete
/// as many, per edge type (same scheme as the contrastive view).
pub fn perturb_structural(g: &HetGraph, ratio: f64, seed: u64) -> Result<HetGraph> {
    Ok(perturb_edges(g, ratio, seed)?.graph)
}

/// Reassign the relation of `round(ratio * |E|)` edges, drawing uniformly
/// among the other relations that share the same endpoint signature and
/// directionality. Edges without an alternative are not eligible.
pub fn perturb_edge_types(g: &HetGraph, ratio: f64, seed: u64) -> Result<HetGraph> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CoreError::Config(format!("perturbation ratio {ratio} not in [0,1]")));
    }
    let total_edges: usize = g.relations().iter().map(|r| r.edges.len()).sum();
    let target = (ratio * total_edges as f64).round() as usize;

    // group relation indices by endpoint signature
    let mut groups: BTreeMap<(usize, usize, bool), Vec<usize>> = BTreeMap::new();
    for (ri, r) in g.relations().iter().enumerate() {
        groups
            .entry((r.src_ty, r.dst_ty, r.bidirectional))
            .or_default()
            .push(ri);
    }
    let mut eligible: Vec<(usize, usize)> = Vec::new(); // (relation, edge index)
    for rels in groups.values().filter(|v| v.len() >= 2) {
        for &ri in rels {
            for ei in 0..g.relations()[ri].edges.len() {
                eligible.push((ri, ei));
            }
        }
    }
    if target > eligible.len() {
        warn!(
            "edge-type perturbation wants {target} edges but only {} have same-signature alternatives",
            eligible.len()
        );
    }
    let mut rng = rng_from(&[seed, tag::SEMANTIC, 1]);
    eligible.shuffle(&mut rng);
    let chosen = &eligible[..target.min(eligible.len())];

    let mut moves: BTreeMap<usize, Vec<usize>> = BTreeMap::new(); // relation -> edge indices leaving
    let mut arrivals: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(ri, ei) in chosen {
        let r = &g.relations()[ri];
        let group = &groups[&(r.src_ty, r.dst_ty, r.bidirectional)];
        let others: Vec<usize> = group.iter().cloned().filter(|&o| o != ri).collect();
        let dest = others[rng.gen_range(0..others.len())];
        moves.entry(ri).or_default().push(ei);
        arrivals.entry(dest).or_default().push(r.edges[ei]);
    }

    let mut edits: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for ri in 0..g.relations().len() {
        if !moves.contains_key(&ri) && !arrivals.contains_key(&ri) {
            continue;
        }
        let r = &g.relations()[ri];
        let leaving: std::collections::BTreeSet<usize> =
            moves.get(&ri).map(|v| v.iter().cloned().collect()).unwrap_or_default();
        let mut edges: Vec<(usize, usize)> = r
            .edges
            .iter()
            .enumerate()
            .filter(|(ei, _)| !leaving.contains(ei))
            .map(|(_, &e)| e)
            .collect();
        if let Some(a) = arrivals.get(&ri) {
            edges.extend(a.iter().cloned());
        }
        edits.insert(ri, edges);
    }
    Ok(g.with_relation_edges(&edits))
}

/// Reassign the node type of `round(ratio * |V|)` nodes uniformly among the
/// other types. Feature rows follow their node when dimensions allow; a node
/// arriving in a featured type without a usable row gets zeros. Labels are
/// kept only on nodes that remain in the labeled type.
pub fn perturb_node_types(g: &HetGraph, ratio: f64, seed: u64) -> Result<HetGraph> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CoreError::Config(format!("perturbation ratio {ratio} not in [0,1]")));
    }
    let featured_dims: Vec<Option<usize>> = (0..g.type_count())
        .map(|ty| g.features(ty).map(|f| f.ncols()))
        .collect();

    let n = g.node_count();
    let target = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(&[seed, tag::SEMANTIC, 2]);
    order.shuffle(&mut rng);
    let mut new_ty: Vec<usize> = g.nodes().iter().map(|nd| nd.ty).collect();
    for &i in &order[..target] {
        let old = new_ty[i];
        let pick = rng.gen_range(0..g.type_count() - 1);
        new_ty[i] = if pick >= old { pick + 1 } else { pick };
    }

    let mut b = GraphBuilder::default();
    for (i, nd) in g.nodes().iter().enumerate() {
        let ty = new_ty[i];
        let label = match (nd.label, g.labeled_type()) {
            (Some(l), Some(lt)) if ty == lt => Some(g.label_names()[l].clone()),
            _ => None,
        };
        b.nodes
            .push((nd.id.clone(), g.type_names()[ty].clone(), label));
    }
    for r in g.relations() {
        let dir = if r.bidirectional { true } else { false };
        for &(u, v) in &r.edges {
            b.edges.push((
                g.nodes()[u].id.clone(),
                g.nodes()[v].id.clone(),
                r.name.clone(),
                dir,
            ));
        }
    }
    for ty in 0..g.type_count() {
        let Some(dim) = featured_dims[ty] else { continue };
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, nd) in g.nodes().iter().enumerate() {
            if new_ty[i] != ty {
                continue;
            }
            let row = if nd.ty == ty {
                g.features(ty).unwrap().row(g.local_index(i)).to_vec()
            } else if featured_dims[nd.ty] == Some(dim) {
                g.features(nd.ty).unwrap().row(g.local_index(i)).to_vec()
            } else {
                vec![0.0; dim]
            };
            rows.push((nd.id.clone(), row));
        }
        b.features.insert(g.type_names()[ty].clone(), rows);
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::GraphBuilder;

    fn bipartite(n_src: usize, n_dst: usize, edges: &[(usize, usize)]) -> HetGraph {
        let mut b = GraphBuilder::default();
        for i in 0..n_src {
            b.nodes.push((format!("u{i}"), "u".into(), None));
        }
        for j in 0..n_dst {
            b.nodes.push((format!("v{j}"), "v".into(), None));
        }
        for &(i, j) in edges {
            b.edges
                .push((format!("u{i}"), format!("v{j}"), "r".into(), true));
        }
        b.build().unwrap()
    }

    #[test]
    fn p_zero_is_identity() {
        let g = bipartite(5, 5, &[(0, 0), (1, 1), (2, 2)]);
        let v = perturb_edges(&g, 0.0, 3).unwrap();
        assert_eq!(v.graph, g);
    }

    #[test]
    fn counts_preserved_and_edges_valid() {
        // 10x10 bipartite with 100 possible pairs, 50 present
        let edges: Vec<(usize, usize)> = (0..50).map(|k| (k / 10, k % 10)).collect();
        let g = bipartite(10, 10, &edges);
        let v = perturb_edges(&g, 0.2, 11).unwrap();
        let r = &v.graph.relations()[0];
        assert_eq!(r.edges.len(), 50, "edge count preserved");
        let orig: std::collections::BTreeSet<(usize, usize)> =
            g.relations()[0].edges.iter().cloned().collect();
        let now: std::collections::BTreeSet<(usize, usize)> = r.edges.iter().cloned().collect();
        let removed = orig.difference(&now).count();
        let added = now.difference(&orig).count();
        assert_eq!(removed, 5, "round(0.1*50) deletions");
        assert_eq!(added, 5);
        // additions are type-valid (u-type source, v-type target) and were absent
        for e in now.difference(&orig) {
            assert_eq!(v.graph.node_type(e.0), 0);
            assert_eq!(v.graph.node_type(e.1), 1);
            assert!(!orig.contains(e));
        }
    }

    #[test]
    fn same_seed_same_view() {
        let edges: Vec<(usize, usize)> = (0..30).map(|k| (k / 6, k % 6)).collect();
        let g = bipartite(6, 6, &edges);
        let a = perturb_edges(&g, 0.3, 5).unwrap();
        let b = perturb_edges(&g, 0.3, 5).unwrap();
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn edge_type_reassignment_conserves_totals() {
        let mut b = GraphBuilder::default();
        for i in 0..6 {
            b.nodes.push((format!("u{i}"), "u".into(), None));
            b.nodes.push((format!("v{i}"), "v".into(), None));
        }
        for i in 0..6 {
            b.edges
                .push((format!("u{i}"), format!("v{i}"), "r1".into(), true));
            b.edges.push((
                format!("u{i}"),
                format!("v{}", (i + 1) % 6),
                "r2".into(),
                true,
            ));
        }
        let g = b.build().unwrap();
        let p = perturb_edge_types(&g, 0.5, 3).unwrap();
        let total: usize = p.relations().iter().map(|r| r.edges.len()).sum();
        assert_eq!(total, 12);
        // some edges should actually have moved between the two buckets
        let membership = |g: &HetGraph, name: &str| -> Vec<(usize, usize)> {
            g.relations()
                .iter()
                .filter(|r| r.name == name)
                .flat_map(|r| r.edges.iter().cloned())
                .collect()
        };
        assert_ne!(membership(&g, "r1"), membership(&p, "r1"));
    }

    #[test]
    fn node_type_reassignment_keeps_node_set() {
        let g = bipartite(4, 4, &[(0, 0), (1, 1), (2, 3)]);
        let p = perturb_node_types(&g, 0.25, 9).unwrap();
        assert_eq!(p.node_count(), g.node_count());
        let moved = (0..g.node_count())
            .filter(|&i| {
                let id = &g.nodes()[i].id;
                let j = p.find_node(id).unwrap();
                p.node_type(j) != g.node_type(i)
            })
            .count();
        assert_eq!(moved, 2, "round(0.25*8) nodes re-typed");
    }
}
