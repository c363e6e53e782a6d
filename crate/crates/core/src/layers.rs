//! The two encoders.
//!
//! [`structural_encode`] runs a hyperbolic GCN over the type-erased graph:
//! per layer, a Möbius linear transform, degree-normalized tangent-space
//! aggregation and a tangent-space ReLU.
//!
//! [`hetero_encode`] keeps types: per layer, an independent Möbius transform
//! per node type (own weight, bias and curvature), inner-type aggregation per
//! directed edge type, attention-weighted inter-type combination against a
//! cached previous-epoch aggregate, and a shared activation that brings every
//! type to the layer's common curvature.
//!
//! Both encoders run on the autodiff tape and work for either geometry kind,
//! which is what the ablation variants rely on.

use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{EdgeAggregateSpec, Grads, NodeId, ParamStore, Tape};
use crate::geometry::Geometry;
use crate::hetgraph::HetGraph;
use crate::rng::{rng_from, tag};

/// LeakyReLU slope for attention scores.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Pre-image value for which softplus gives curvature `c`.
pub fn softplus_inverse(c: f64) -> f64 {
    (c.exp() - 1.0).ln()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    /// Aligned input dimension (every type is projected here first).
    pub d0: usize,
    /// Output dimension per layer; the length is the layer count `L`.
    pub hidden: Vec<usize>,
}

impl ModelDims {
    pub fn layer_count(&self) -> usize {
        self.hidden.len()
    }

    pub fn out_dim(&self) -> usize {
        *self.hidden.last().expect("at least one layer")
    }
}

fn xavier(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    scaled_xavier(rng, rows, cols, 1.0)
}

fn scaled_xavier(
    rng: &mut rand_chacha::ChaCha8Rng,
    rows: usize,
    cols: usize,
    gain: f64,
) -> Array2<f64> {
    let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Register every encoder parameter for graph `g`. Featureless node types get
/// trainable free embedding rows in `[-0.05, 0.05]` instead of an input
/// projection.
pub fn init_encoder_params(store: &mut ParamStore, g: &HetGraph, dims: &ModelDims, seed: u64) {
    let mut rng = rng_from(&[seed, tag::INIT]);
    let n_ty = g.type_count();
    let l_count = dims.layer_count();
    let theta0 = softplus_inverse(1.0);

    // curvatures: shared input, shared final, per-path and per-type interior
    store.register("curv.c0", Array2::from_elem((1, 1), theta0));
    store.register("curv.cL", Array2::from_elem((1, 1), theta0));
    for l in 1..l_count {
        store.register(format!("st.curv.l{l}"), Array2::from_elem((1, 1), theta0));
        store.register(format!("he.curv.l{l}"), Array2::from_elem((1, 1), theta0));
    }
    for l in 1..=l_count {
        for ty in 0..n_ty {
            store.register(
                format!("he.curv.l{l}.t{ty}"),
                Array2::from_elem((1, 1), theta0),
            );
        }
    }

    for prefix in ["st", "he"] {
        for ty in 0..n_ty {
            match g.features(ty) {
                // damped gain keeps initial tangent norms small, away from
                // the strongly curved outer region
                Some(f) => store.register(
                    format!("{prefix}.in.t{ty}.w"),
                    scaled_xavier(&mut rng, f.ncols(), dims.d0, 0.3),
                ),
                None => store.register(
                    format!("{prefix}.in.t{ty}.free"),
                    Array2::from_shape_fn((g.type_size(ty), dims.d0), |_| {
                        rng.gen_range(-0.05..0.05)
                    }),
                ),
            }
        }
    }

    let mut d_prev = dims.d0;
    for (l, &d_l) in dims.hidden.iter().enumerate() {
        let l = l + 1;
        store.register(format!("st.l{l}.w"), xavier(&mut rng, d_prev, d_l));
        store.register(format!("st.l{l}.b"), Array2::zeros((1, d_l)));
        for ty in 0..n_ty {
            store.register(format!("he.l{l}.t{ty}.w"), xavier(&mut rng, d_prev, d_l));
            store.register(format!("he.l{l}.t{ty}.b"), Array2::zeros((1, d_l)));
            store.register(format!("he.l{l}.t{ty}.u"), xavier(&mut rng, 2 * d_l, 1));
        }
        d_prev = d_l;
    }
}

/// Store parameters bound onto a tape for one forward/backward pass.
pub struct BoundParams {
    ids: Vec<NodeId>,
    by_name: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn bind(t: &mut Tape, store: &ParamStore) -> Self {
        let mut ids = Vec::with_capacity(store.len());
        let mut by_name = BTreeMap::new();
        for e in store.entries() {
            let id = t.leaf(e.value.clone());
            ids.push(id);
            by_name.insert(e.name.clone(), id);
        }
        BoundParams { ids, by_name }
    }

    pub fn node(&self, name: &str) -> NodeId {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter: {name}"))
    }

    pub fn try_node(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    /// Collect `(store index, gradient)` pairs for an Adam step.
    pub fn collect_grads(&self, grads: &Grads) -> Vec<(usize, Array2<f64>)> {
        self.ids
            .iter()
            .enumerate()
            .filter_map(|(i, &id)| grads.get(id).map(|g| (i, g.clone())))
            .collect()
    }

    /// Gradient of one named parameter, if any reached it.
    pub fn grad_of<'g>(&self, grads: &'g Grads, name: &str) -> Option<&'g Array2<f64>> {
        grads.get(self.node(name))
    }
}

/// Curvature nodes (softplus of their pre-images) for one forward pass.
/// Index `[l-1]` holds layer `l`; the last entries of `st` and `he_shared`
/// are the same shared final-curvature node.
pub struct Curvatures {
    pub c0: NodeId,
    pub st: Vec<NodeId>,
    pub he_shared: Vec<NodeId>,
    /// `[l-1][ty]`
    pub he_ty: Vec<Vec<NodeId>>,
}

impl Curvatures {
    pub fn build(t: &mut Tape, bp: &BoundParams, l_count: usize, n_ty: usize) -> Self {
        let c0_pre = bp.node("curv.c0");
        let c0 = t.softplus(c0_pre);
        let cl_pre = bp.node("curv.cL");
        let c_last = t.softplus(cl_pre);
        let mut st = Vec::new();
        let mut he_shared = Vec::new();
        for l in 1..=l_count {
            if l == l_count {
                st.push(c_last);
                he_shared.push(c_last);
            } else {
                let a = bp.node(&format!("st.curv.l{l}"));
                st.push(t.softplus(a));
                let b = bp.node(&format!("he.curv.l{l}"));
                he_shared.push(t.softplus(b));
            }
        }
        let mut he_ty = Vec::with_capacity(l_count);
        for l in 1..=l_count {
            let mut per_ty = Vec::with_capacity(n_ty);
            for ty in 0..n_ty {
                let id = bp.node(&format!("he.curv.l{l}.t{ty}"));
                per_ty.push(t.softplus(id));
            }
            he_ty.push(per_ty);
        }
        Curvatures {
            c0,
            st,
            he_shared,
            he_ty,
        }
    }

    pub fn final_curvature(&self) -> NodeId {
        *self.st.last().expect("at least one layer")
    }
}

// ---------------------------------------------------------------------------
// structural path
// ---------------------------------------------------------------------------

/// Degree-normalized aggregation structure over the collapsed graph.
#[derive(Debug, Clone)]
pub struct StructuralGraph {
    pub spec: Rc<EdgeAggregateSpec>,
}

impl StructuralGraph {
    /// Collapse `g` and add self-loops so isolated nodes stay well-defined.
    pub fn new(g: &HetGraph) -> Self {
        let adj = g.collapse_to_homogeneous().neighbors(true);
        Self::from_neighbor_lists(&adj)
    }

    /// Weights `1/sqrt(|N(i)| |N(j)|)` straight from the given lists.
    pub fn from_neighbor_lists(adj: &[Vec<usize>]) -> Self {
        let deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
        let mut edges = Vec::new();
        for (i, list) in adj.iter().enumerate() {
            for &j in list {
                let w = 1.0 / ((deg[i] * deg[j]) as f64).sqrt();
                edges.push((i as u32, j as u32, w));
            }
        }
        StructuralGraph {
            spec: Rc::new(EdgeAggregateSpec {
                out_rows: adj.len(),
                edges,
            }),
        }
    }
}

/// Stack per-type inputs into the aligned dimension, in canonical node order.
/// Featured types go through their input projection; featureless types use
/// their free embedding rows directly.
pub fn aligned_features(t: &mut Tape, bp: &BoundParams, g: &HetGraph, prefix: &str) -> NodeId {
    let mut parts = Vec::with_capacity(g.type_count());
    for ty in 0..g.type_count() {
        match g.features(ty) {
            Some(f) => {
                let raw = t.constant(f.clone());
                let w = bp.node(&format!("{prefix}.in.t{ty}.w"));
                parts.push(t.matmul(raw, w));
            }
            None => parts.push(bp.node(&format!("{prefix}.in.t{ty}.free"))),
        }
    }
    t.concat_rows(&parts)
}

/// Lift aligned features onto the ball: `exp_o^{c0}(X W^0)`.
pub fn init_features(t: &mut Tape, geo: &Geometry, aligned: NodeId, c0: NodeId) -> NodeId {
    geo.expmap0(t, aligned, c0)
}

/// One structural layer: Möbius linear transform, tangent aggregation with
/// the given weights, tangent ReLU. Input at `c_prev`, output at `c_l`.
pub fn structural_layer(
    t: &mut Tape,
    geo: &Geometry,
    x: NodeId,
    sgraph: &StructuralGraph,
    w: NodeId,
    b_pre: NodeId,
    c_prev: NodeId,
    c_l: NodeId,
) -> NodeId {
    let wx = geo.matvec(t, x, w, c_prev);
    let b_ball = geo.expmap0(t, b_pre, c_prev);
    let h = geo.mobius_add(t, wx, b_ball, c_prev);
    let tangent = geo.logmap0(t, h, c_prev);
    let agg = t.edge_aggregate(tangent, sgraph.spec.clone());
    let y = geo.expmap0(t, agg, c_l);
    let ylog = geo.logmap0(t, y, c_l);
    let act = t.relu(ylog);
    geo.expmap0(t, act, c_l)
}

/// Full structural encoder: returns `Z^st` at the shared final curvature.
pub fn structural_encode(
    t: &mut Tape,
    geo: &Geometry,
    bp: &BoundParams,
    curv: &Curvatures,
    sgraph: &StructuralGraph,
    g: &HetGraph,
    dims: &ModelDims,
) -> NodeId {
    let aligned = aligned_features(t, bp, g, "st");
    let mut x = init_features(t, geo, aligned, curv.c0);
    let mut c_prev = curv.c0;
    for l in 1..=dims.layer_count() {
        let w = bp.node(&format!("st.l{l}.w"));
        let b = bp.node(&format!("st.l{l}.b"));
        let c_l = curv.st[l - 1];
        x = structural_layer(t, geo, x, sgraph, w, b, c_prev, c_l);
        c_prev = c_l;
    }
    x
}

// ---------------------------------------------------------------------------
// heterogeneous path
// ---------------------------------------------------------------------------

/// One directed message-passing block with its normalized weights in
/// type-local indices.
#[derive(Debug, Clone)]
pub struct HeteroEdgeBlock {
    pub name: String,
    pub src_ty: usize,
    pub dst_ty: usize,
    pub spec: Rc<EdgeAggregateSpec>,
}

/// Per-view propagation structure for the typed encoder.
#[derive(Debug, Clone)]
pub struct HeteroView {
    pub blocks: Vec<HeteroEdgeBlock>,
    /// Per node type: indices into `blocks` whose destination is that type.
    pub incident: Vec<Vec<usize>>,
}

impl HeteroView {
    pub fn new(g: &HetGraph) -> Self {
        let mut blocks = Vec::new();
        for det in g.directed_edge_types() {
            let edges = g.directed_edges(&det);
            let n_dst = g.type_size(det.dst_ty);
            let n_src = g.type_size(det.src_ty);
            let mut in_deg = vec![0usize; n_dst];
            let mut out_deg = vec![0usize; n_src];
            for &(s, d) in &edges {
                in_deg[g.local_index(d)] += 1;
                out_deg[g.local_index(s)] += 1;
            }
            let weighted: Vec<(u32, u32, f64)> = edges
                .iter()
                .map(|&(s, d)| {
                    let sl = g.local_index(s);
                    let dl = g.local_index(d);
                    let w = 1.0 / ((in_deg[dl] * out_deg[sl]) as f64).sqrt();
                    (dl as u32, sl as u32, w)
                })
                .collect();
            blocks.push(HeteroEdgeBlock {
                name: det.name,
                src_ty: det.src_ty,
                dst_ty: det.dst_ty,
                spec: Rc::new(EdgeAggregateSpec {
                    out_rows: n_dst,
                    edges: weighted,
                }),
            });
        }
        let mut incident = vec![Vec::new(); g.type_count()];
        for (bi, b) in blocks.iter().enumerate() {
            incident[b.dst_ty].push(bi);
        }
        HeteroView { blocks, incident }
    }
}

/// Previous-epoch inter-type aggregates, `[layer-1][type]`, stored as plain
/// values so the attention query never carries gradient.
pub type AttnCache = Vec<Vec<Option<Array2<f64>>>>;

pub fn empty_cache(l_count: usize, n_ty: usize) -> AttnCache {
    vec![vec![None; n_ty]; l_count]
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeteroOptions {
    /// Use the destination type's curvature in inner-type aggregation
    /// instead of the source type's (the printed form uses the source's).
    pub inner_curvature_target: bool,
}

pub struct HeteroOutput {
    /// Final per-type embeddings at the shared final curvature.
    pub per_type: Vec<NodeId>,
    /// Inter-type aggregates `[layer-1][type]` (for the cache refresh).
    pub aggregates: Vec<Vec<NodeId>>,
    /// Attention rows `[layer-1][type]`, absent for types with no incident
    /// relations.
    pub attention: Vec<Vec<Option<NodeId>>>,
}

impl HeteroOutput {
    /// Stack per-type matrices in canonical node order.
    pub fn stacked(&self, t: &mut Tape) -> NodeId {
        t.concat_rows(&self.per_type)
    }
}

/// Independent Möbius transform per node type, then a curvature move to the
/// type's own layer curvature.
pub fn hetero_transform(
    t: &mut Tape,
    geo: &Geometry,
    x_ty: NodeId,
    w: NodeId,
    b_pre: NodeId,
    c_prev: NodeId,
    c_ty: NodeId,
) -> NodeId {
    let wx = geo.matvec(t, x_ty, w, c_prev);
    let b_ball = geo.expmap0(t, b_pre, c_prev);
    let h = geo.mobius_add(t, wx, b_ball, c_prev);
    let tangent = geo.logmap0(t, h, c_prev);
    geo.expmap0(t, tangent, c_ty)
}

/// Inner-type aggregation for one directed block: degree-normalized tangent
/// sum of transformed source features. Targets without sources map to the
/// origin.
pub fn inner_type_aggregate(
    t: &mut Tape,
    geo: &Geometry,
    h_src: NodeId,
    block: &HeteroEdgeBlock,
    c_used: NodeId,
) -> NodeId {
    let tangent = geo.logmap0(t, h_src, c_used);
    let agg = t.edge_aggregate(tangent, block.spec.clone());
    geo.expmap0(t, agg, c_used)
}

/// Run the typed encoder over one graph view. Inputs and the output are in
/// the canonical per-type layout; curvatures follow the layer schedule.
#[allow(clippy::too_many_arguments)]
pub fn hetero_encode(
    t: &mut Tape,
    geo: &Geometry,
    bp: &BoundParams,
    curv: &Curvatures,
    view: &HeteroView,
    g: &HetGraph,
    dims: &ModelDims,
    cache: &AttnCache,
    opts: HeteroOptions,
) -> HeteroOutput {
    let n_ty = g.type_count();
    let l_count = dims.layer_count();

    let mut x_ty: Vec<NodeId> = Vec::with_capacity(n_ty);
    for ty in 0..n_ty {
        let aligned = match g.features(ty) {
            Some(f) => {
                let raw = t.constant(f.clone());
                let w = bp.node(&format!("he.in.t{ty}.w"));
                t.matmul(raw, w)
            }
            None => bp.node(&format!("he.in.t{ty}.free")),
        };
        x_ty.push(geo.expmap0(t, aligned, curv.c0));
    }

    let mut aggregates: Vec<Vec<NodeId>> = Vec::with_capacity(l_count);
    let mut attention: Vec<Vec<Option<NodeId>>> = Vec::with_capacity(l_count);
    let mut c_prev = curv.c0;

    for l in 1..=l_count {
        // (1) independent transforms
        let mut h_ty: Vec<NodeId> = Vec::with_capacity(n_ty);
        for ty in 0..n_ty {
            let w = bp.node(&format!("he.l{l}.t{ty}.w"));
            let b = bp.node(&format!("he.l{l}.t{ty}.b"));
            let c_ty = curv.he_ty[l - 1][ty];
            h_ty.push(hetero_transform(t, geo, x_ty[ty], w, b, c_prev, c_ty));
        }

        // (2) inner-type aggregation per directed block
        let mut block_out: Vec<NodeId> = Vec::with_capacity(view.blocks.len());
        let mut block_curv: Vec<NodeId> = Vec::with_capacity(view.blocks.len());
        for block in &view.blocks {
            let c_used = if opts.inner_curvature_target {
                curv.he_ty[l - 1][block.dst_ty]
            } else {
                curv.he_ty[l - 1][block.src_ty]
            };
            block_out.push(inner_type_aggregate(t, geo, h_ty[block.src_ty], block, c_used));
            block_curv.push(c_used);
        }

        // (3) inter-type attention per destination type
        let mut layer_agg: Vec<NodeId> = Vec::with_capacity(n_ty);
        let mut layer_rho: Vec<Option<NodeId>> = Vec::with_capacity(n_ty);
        for ty in 0..n_ty {
            let c_ty = curv.he_ty[l - 1][ty];
            let blocks_here = &view.incident[ty];
            if blocks_here.is_empty() {
                // no incident relation: transformed features pass through
                layer_agg.push(h_ty[ty]);
                layer_rho.push(None);
                continue;
            }
            let logs: Vec<NodeId> = blocks_here
                .iter()
                .map(|&bi| {
                    let id = block_out[bi];
                    let c = block_curv[bi];
                    geo.logmap0(t, id, c)
                })
                .collect();
            // attention query: cached previous-epoch aggregate, or the
            // uniform tangent mean of this epoch's aggregates (detached)
            let y_prev_log = match &cache[l - 1][ty] {
                Some(m) => {
                    let prev = t.constant(m.clone());
                    geo.logmap0(t, prev, c_ty)
                }
                None => {
                    let detached: Vec<NodeId> = logs.iter().map(|&id| t.detach(id)).collect();
                    let mut acc = detached[0];
                    for &d in &detached[1..] {
                        acc = t.add(acc, d);
                    }
                    t.affine(acc, 1.0 / detached.len() as f64, 0.0)
                }
            };
            let u = bp.node(&format!("he.l{l}.t{ty}.u"));
            let scores: Vec<NodeId> = logs
                .iter()
                .map(|&lg| {
                    let cat = t.concat_cols(&[y_prev_log, lg]);
                    let s = t.matmul(cat, u);
                    t.leaky_relu(s, LEAKY_SLOPE)
                })
                .collect();
            let score_mat = t.concat_cols(&scores);
            let rho = t.softmax_rows(score_mat);
            let mut tangent_out: Option<NodeId> = None;
            for (k, &lg) in logs.iter().enumerate() {
                let w_k = t.slice_cols(rho, k, 1);
                let term = t.mul(lg, w_k);
                tangent_out = Some(match tangent_out {
                    Some(acc) => t.add(acc, term),
                    None => term,
                });
            }
            let y = geo.expmap0(t, tangent_out.unwrap(), c_ty);
            layer_agg.push(y);
            layer_rho.push(Some(rho));
        }

        // (4) shared activation onto the layer's common curvature
        let c_l = curv.he_shared[l - 1];
        let mut next: Vec<NodeId> = Vec::with_capacity(n_ty);
        for ty in 0..n_ty {
            let c_ty = curv.he_ty[l - 1][ty];
            let lg = geo.logmap0(t, layer_agg[ty], c_ty);
            let act = t.relu(lg);
            next.push(geo.expmap0(t, act, c_l));
        }
        aggregates.push(layer_agg);
        attention.push(layer_rho);
        x_ty = next;
        c_prev = c_l;
    }

    HeteroOutput {
        per_type: x_ty,
        aggregates,
        attention,
    }
}

/// Cross-view combination: per type `Z_ty ⊕ Z'_ty`, stacked canonically.
pub fn combine_views(
    t: &mut Tape,
    geo: &Geometry,
    a: &[NodeId],
    b: &[NodeId],
    c_l: NodeId,
) -> NodeId {
    assert_eq!(a.len(), b.len());
    let combined: Vec<NodeId> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| geo.mobius_add(t, x, y, c_l))
        .collect();
    t.concat_rows(&combined)
}

/// Detached copies of the inter-type aggregates, for the cache refresh.
pub fn snapshot_aggregates(t: &Tape, out: &HeteroOutput) -> AttnCache {
    out.aggregates
        .iter()
        .map(|per_ty| per_ty.iter().map(|&id| Some(t.value(id).clone())).collect())
        .collect()
}
