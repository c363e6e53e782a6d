//! Typed-graph data model.
//!
//! A [`HetGraph`] owns nodes partitioned by node type, typed edge buckets, an
//! optional raw feature matrix per node type and optional labels on a single
//! node type. Node and edge types are disjoint label sets and the graph must
//! carry more than two of them in total.
//!
//! Edges are bucketed by `(relation name, source type, destination type)`.
//! Bidirectional relations are materialized for message passing as two
//! directed edge types with opposite directions; see
//! [`HetGraph::directed_edge_types`].
//!
//! The node order is canonical: sorted by `(type, id)` with numeric ids
//! compared numerically. All derived artifacts (splits, perturbed views,
//! samples) are pure functions of `(graph, parameters, seed)`.

pub mod hyperbolicity;
pub mod io;
pub mod perturb;
pub mod sample;
pub mod split;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use ndarray::Array2;

use crate::error::{CoreError, Result};

/// One node: external id, node type index, optional class label index.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRec {
    pub id: String,
    pub ty: usize,
    pub label: Option<usize>,
}

/// One edge bucket. `edges` hold global node indices `(src, dst)`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub name: String,
    pub src_ty: usize,
    pub dst_ty: usize,
    pub bidirectional: bool,
    pub edges: Vec<(usize, usize)>,
}

/// A directed message-passing edge type derived from a relation.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdgeType {
    pub name: String,
    pub relation: usize,
    pub reversed: bool,
    pub src_ty: usize,
    pub dst_ty: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HetGraph {
    type_names: Vec<String>,
    nodes: Vec<NodeRec>,
    type_ranges: Vec<Range<usize>>,
    relations: Vec<Relation>,
    /// Per node type; rows follow the type-local node order.
    features: Vec<Option<Array2<f64>>>,
    label_names: Vec<String>,
    labeled_type: Option<usize>,
}

/// Compare ids numerically when both parse as unsigned integers.
pub(crate) fn id_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Raw material for building a validated graph.
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    /// (id, type name, optional label name)
    pub nodes: Vec<(String, String, Option<String>)>,
    /// (src id, dst id, relation name, bidirectional)
    pub edges: Vec<(String, String, String, bool)>,
    /// type name -> rows of (id, feature vector)
    pub features: BTreeMap<String, Vec<(String, Vec<f64>)>>,
}

impl GraphBuilder {
    pub fn build(self) -> Result<HetGraph> {
        let bad = |msg: String| CoreError::GraphData(msg);

        // node types, sorted by name
        let mut type_names: Vec<String> =
            self.nodes.iter().map(|(_, t, _)| t.clone()).collect();
        type_names.sort();
        type_names.dedup();
        let ty_index = |name: &str| -> Option<usize> {
            type_names.binary_search_by(|t| t.as_str().cmp(name)).ok()
        };

        // canonical node order: (type, id)
        let mut recs: Vec<(String, usize, Option<String>)> = self
            .nodes
            .into_iter()
            .map(|(id, t, l)| {
                let ty = ty_index(&t).expect("type collected above");
                (id, ty, l)
            })
            .collect();
        recs.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| id_order(&a.0, &b.0)));
        for w in recs.windows(2) {
            if w[0].1 == w[1].1 && w[0].0 == w[1].0 {
                return Err(bad(format!("duplicate node id: {}", w[0].0)));
            }
        }

        // label space
        let mut label_names: Vec<String> = recs
            .iter()
            .filter_map(|(_, _, l)| l.clone())
            .collect();
        label_names.sort();
        label_names.dedup();
        let labeled_types: BTreeSet<usize> = recs
            .iter()
            .filter(|(_, _, l)| l.is_some())
            .map(|(_, ty, _)| *ty)
            .collect();
        if labeled_types.len() > 1 {
            return Err(bad("labels must cover a single node type".into()));
        }
        let labeled_type = labeled_types.into_iter().next();

        let nodes: Vec<NodeRec> = recs
            .into_iter()
            .map(|(id, ty, l)| NodeRec {
                id,
                ty,
                label: l.map(|name| {
                    label_names
                        .binary_search(&name)
                        .expect("label collected above")
                }),
            })
            .collect();

        // contiguous index range per type
        let mut type_ranges = vec![0..0; type_names.len()];
        {
            let mut start = 0;
            for ty in 0..type_names.len() {
                let end = start + nodes[start..].iter().take_while(|n| n.ty == ty).count();
                type_ranges[ty] = start..end;
                start = end;
            }
        }

        // id -> global index
        let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if by_id.insert(n.id.as_str(), i).is_some() {
                return Err(bad(format!("duplicate node id: {}", n.id)));
            }
        }

        // bucket edges by (name, src_ty, dst_ty, bidirectional)
        let mut buckets: BTreeMap<(String, usize, usize, bool), BTreeSet<(usize, usize)>> =
            BTreeMap::new();
        for (src_id, dst_id, rel, bidi) in &self.edges {
            let &src = by_id
                .get(src_id.as_str())
                .ok_or_else(|| bad(format!("edge references missing node: {src_id}")))?;
            let &dst = by_id
                .get(dst_id.as_str())
                .ok_or_else(|| bad(format!("edge references missing node: {dst_id}")))?;
            if ty_index(rel).is_some() {
                return Err(bad(format!(
                    "relation name collides with a node type: {rel}"
                )));
            }
            buckets
                .entry((rel.clone(), nodes[src].ty, nodes[dst].ty, *bidi))
                .or_default()
                .insert((src, dst));
        }
        let relations: Vec<Relation> = buckets
            .into_iter()
            .map(|((name, src_ty, dst_ty, bidirectional), edges)| Relation {
                name,
                src_ty,
                dst_ty,
                bidirectional,
                edges: edges.into_iter().collect(),
            })
            .collect();

        let mut rel_names: Vec<&str> = relations.iter().map(|r| r.name.as_str()).collect();
        rel_names.sort();
        rel_names.dedup();
        if type_names.len() + rel_names.len() <= 2 {
            return Err(bad(format!(
                "need |node types| + |edge types| > 2, got {} + {}",
                type_names.len(),
                rel_names.len()
            )));
        }

        // per-type features, aligned to the type-local node order
        let mut features: Vec<Option<Array2<f64>>> = vec![None; type_names.len()];
        for (ty_name, rows) in self.features {
            let ty = ty_index(&ty_name)
                .ok_or_else(|| bad(format!("features for unknown node type: {ty_name}")))?;
            let range = type_ranges[ty].clone();
            if rows.is_empty() {
                continue;
            }
            let dim = rows[0].1.len();
            let mut mat = Array2::zeros((range.len(), dim));
            let mut seen = vec![false; range.len()];
            for (id, vals) in rows {
                if vals.len() != dim {
                    return Err(bad(format!(
                        "ragged feature row for node {id}: {} vs {dim}",
                        vals.len()
                    )));
                }
                let &g = by_id
                    .get(id.as_str())
                    .ok_or_else(|| bad(format!("features for missing node: {id}")))?;
                if nodes[g].ty != ty {
                    return Err(bad(format!("feature file lists node {id} of another type")));
                }
                let local = g - range.start;
                seen[local] = true;
                for (j, v) in vals.into_iter().enumerate() {
                    mat[(local, j)] = v;
                }
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(bad(format!(
                    "feature file for {ty_name} misses node {}",
                    nodes[range.start + missing].id
                )));
            }
            features[ty] = Some(mat);
        }

        Ok(HetGraph {
            type_names,
            nodes,
            type_ranges,
            relations,
            features,
            label_names,
            labeled_type,
        })
    }
}

/// The type-erased graph: symmetric neighbor lists over the global node set.
#[derive(Debug, Clone)]
pub struct CollapsedGraph {
    pub node_count: usize,
    /// Undirected deduplicated edge set, `u < v`.
    pub edges: Vec<(usize, usize)>,
}

impl CollapsedGraph {
    /// Neighbor lists; `with_self_loops` inserts `i` into its own list.
    pub fn neighbors(&self, with_self_loops: bool) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        if with_self_loops {
            for (i, list) in adj.iter_mut().enumerate() {
                list.push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

impl HetGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeRec] {
        &self.nodes
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn type_count(&self) -> usize {
        self.type_names.len()
    }

    pub fn type_range(&self, ty: usize) -> Range<usize> {
        self.type_ranges[ty].clone()
    }

    pub fn type_size(&self, ty: usize) -> usize {
        self.type_ranges[ty].len()
    }

    /// Node-type mapping (the graph's `phi`).
    pub fn node_type(&self, global: usize) -> usize {
        self.nodes[global].ty
    }

    /// Index of a node within its type block.
    pub fn local_index(&self, global: usize) -> usize {
        global - self.type_ranges[self.nodes[global].ty].start
    }

    pub fn global_index(&self, ty: usize, local: usize) -> usize {
        self.type_ranges[ty].start + local
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn features(&self, ty: usize) -> Option<&Array2<f64>> {
        self.features[ty].as_ref()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn labeled_type(&self) -> Option<usize> {
        self.labeled_type
    }

    /// Global indices of labeled nodes, canonical order.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.label.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn find_node(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Message-passing edge types: one per directed relation, two per
    /// bidirectional relation (the reverse carries a `:rev` suffix).
    pub fn directed_edge_types(&self) -> Vec<DirectedEdgeType> {
        let mut out = Vec::new();
        for (ri, r) in self.relations.iter().enumerate() {
            out.push(DirectedEdgeType {
                name: r.name.clone(),
                relation: ri,
                reversed: false,
                src_ty: r.src_ty,
                dst_ty: r.dst_ty,
            });
            if r.bidirectional {
                out.push(DirectedEdgeType {
                    name: format!("{}:rev", r.name),
                    relation: ri,
                    reversed: true,
                    src_ty: r.dst_ty,
                    dst_ty: r.src_ty,
                });
            }
        }
        out
    }

    /// Edges of a directed edge type as `(src, dst)` global pairs.
    pub fn directed_edges(&self, det: &DirectedEdgeType) -> Vec<(usize, usize)> {
        let r = &self.relations[det.relation];
        if det.reversed {
            r.edges.iter().map(|&(s, d)| (d, s)).collect()
        } else {
            r.edges.clone()
        }
    }

    /// Erase all types: the union of every edge bucket as an undirected,
    /// deduplicated edge set over the global node index space.
    pub fn collapse_to_homogeneous(&self) -> CollapsedGraph {
        let mut set: BTreeSet<(usize, usize)> = BTreeSet::new();
        for r in &self.relations {
            for &(u, v) in &r.edges {
                if u == v {
                    continue;
                }
                set.insert((u.min(v), u.max(v)));
            }
        }
        CollapsedGraph {
            node_count: self.node_count(),
            edges: set.into_iter().collect(),
        }
    }

    /// Same nodes/features/labels, different edge sets. `edits` maps
    /// relation index -> replacement edge list; unlisted relations keep
    /// their edges. Buckets are re-formed, so relation indices of the
    /// result may differ when a replacement empties a bucket.
    pub fn with_relation_edges(&self, edits: &BTreeMap<usize, Vec<(usize, usize)>>) -> HetGraph {
        let mut relations: Vec<Relation> = Vec::with_capacity(self.relations.len());
        for (ri, r) in self.relations.iter().enumerate() {
            let mut nr = r.clone();
            if let Some(e) = edits.get(&ri) {
                let set: BTreeSet<(usize, usize)> = e.iter().cloned().collect();
                nr.edges = set.into_iter().collect();
            }
            relations.push(nr);
        }
        relations.retain(|r| !r.edges.is_empty());
        HetGraph {
            type_names: self.type_names.clone(),
            nodes: self.nodes.clone(),
            type_ranges: self.type_ranges.clone(),
            relations,
            features: self.features.clone(),
            label_names: self.label_names.clone(),
            labeled_type: self.labeled_type,
        }
    }

}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Tiny academic-style graph: authors - papers - terms.
    pub fn toy_graph() -> HetGraph {
        let mut b = GraphBuilder::default();
        for (id, ty) in [
            ("a1", "author"),
            ("a2", "author"),
            ("p1", "paper"),
            ("p2", "paper"),
            ("t1", "term"),
        ] {
            b.nodes.push((id.into(), ty.into(), None));
        }
        b.edges.push(("a1".into(), "p1".into(), "writes".into(), true));
        b.edges.push(("a2".into(), "p2".into(), "writes".into(), true));
        b.edges.push(("p1".into(), "t1".into(), "mentions".into(), true));
        b.build().unwrap()
    }
}
