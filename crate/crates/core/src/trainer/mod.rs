//! End-to-end training: parameter registry, epoch loop, ablation variants,
//! early stopping and checkpointing.
//!
//! One run owns all mutable state. Every random draw derives from
//! `(seed, purpose, epoch)`, so a fixed `(seed, config)` pair gives a
//! bit-identical trajectory and resuming from a checkpoint continues the
//! exact run that produced it.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint};

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, NodeId, ParamStore, Tape};
use crate::error::{CoreError, Result};
use crate::eval::{auc_ap, f1_scores};
use crate::geometry::{Geometry, GeometryKind};
use crate::hetgraph::perturb::perturb_edges;
use crate::hetgraph::sample::sample_negative_edges;
use crate::hetgraph::split::{make_splits, SplitSet};
use crate::hetgraph::HetGraph;
use crate::layers::{
    self, AttnCache, BoundParams, Curvatures, HeteroOptions, HeteroView, ModelDims,
    StructuralGraph,
};
use crate::objectives::{self, DifferenceMode, LossWeights};
use crate::rng::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    NodeClassification,
    LinkPrediction,
}

/// Ablation switches; exactly one per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Drop the structural encoder (and with it the disentangling terms).
    WoSt,
    /// Drop the typed encoder (and the contrastive and disentangling terms).
    WoHe,
    /// Keep both encoders but train on a single view without the
    /// contrastive term.
    WoCl,
    /// Replace every geometry kernel with its Euclidean counterpart.
    WoBall,
    /// Contrast the structural output against the typed output instead of
    /// the two typed views.
    WithClPrime,
    /// Keep the architecture but drop the disentangling constraint.
    WoDisentangling,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        Ok(match s {
            "full" => Variant::Full,
            "wo_st" => Variant::WoSt,
            "wo_he" => Variant::WoHe,
            "wo_cl" => Variant::WoCl,
            "wo_ball" => Variant::WoBall,
            "with_cl_prime" => Variant::WithClPrime,
            "wo_disentangling" => Variant::WoDisentangling,
            other => {
                return Err(CoreError::Config(format!("unknown variant: {other}")))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoSt => "wo_st",
            Variant::WoHe => "wo_he",
            Variant::WoCl => "wo_cl",
            Variant::WoBall => "wo_ball",
            Variant::WithClPrime => "with_cl_prime",
            Variant::WoDisentangling => "wo_disentangling",
        }
    }
}

/// Module wiring implied by a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wiring {
    pub use_st: bool,
    pub use_he: bool,
    pub two_views: bool,
    pub contrast_he_views: bool,
    pub contrast_st_he: bool,
    pub use_disentangle: bool,
    pub geometry: GeometryKind,
}

pub fn apply_variant(v: Variant) -> Wiring {
    match v {
        Variant::Full => Wiring {
            use_st: true,
            use_he: true,
            two_views: true,
            contrast_he_views: true,
            contrast_st_he: false,
            use_disentangle: true,
            geometry: GeometryKind::Ball,
        },
        Variant::WoSt => Wiring {
            use_st: false,
            use_he: true,
            two_views: true,
            contrast_he_views: true,
            contrast_st_he: false,
            use_disentangle: false,
            geometry: GeometryKind::Ball,
        },
        Variant::WoHe => Wiring {
            use_st: true,
            use_he: false,
            two_views: false,
            contrast_he_views: false,
            contrast_st_he: false,
            use_disentangle: false,
            geometry: GeometryKind::Ball,
        },
        Variant::WoCl => Wiring {
            use_st: true,
            use_he: true,
            two_views: false,
            contrast_he_views: false,
            contrast_st_he: false,
            use_disentangle: true,
            geometry: GeometryKind::Ball,
        },
        Variant::WoBall => Wiring {
            use_st: true,
            use_he: true,
            two_views: true,
            contrast_he_views: true,
            contrast_st_he: false,
            use_disentangle: true,
            geometry: GeometryKind::Euclidean,
        },
        Variant::WithClPrime => Wiring {
            use_st: true,
            use_he: true,
            two_views: false,
            contrast_he_views: false,
            contrast_st_he: true,
            use_disentangle: true,
            geometry: GeometryKind::Ball,
        },
        Variant::WoDisentangling => Wiring {
            use_st: true,
            use_he: true,
            two_views: true,
            contrast_he_views: true,
            contrast_st_he: false,
            use_disentangle: false,
            geometry: GeometryKind::Ball,
        },
    }
}

/// Training-data corruption for the robustness harness, applied to the
/// message graph after splitting. Evaluation supervision stays clean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainPerturbation {
    pub kind: PerturbKind,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbKind {
    /// Add and delete edges.
    Structural,
    /// Reassign edge types among same-signature relations.
    EdgeTypes,
    /// Reassign node types.
    NodeTypes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub variant: Variant,
    pub dims: ModelDims,
    pub weights: LossWeights,
    pub difference_mode: DifferenceMode,
    /// InfoNCE negatives per anchor.
    pub n_contrast_negatives: usize,
    /// Mutual-information bound negatives per anchor.
    pub n_mi_negatives: usize,
    /// Edge perturbation ratio for the contrastive view.
    pub perturb_ratio: f64,
    /// Fresh perturbed view per epoch (otherwise fixed once).
    pub resample_view_each_epoch: bool,
    /// Inner-type aggregation curvature switch.
    pub inner_curvature_target: bool,
    pub split_ratios: (f64, f64, f64),
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    /// Conditional-network fit steps per model step.
    pub q_steps: usize,
    pub head_hidden: usize,
    pub club_hidden: usize,
    pub disc_hidden: usize,
    /// Negative edges per positive in the link prediction loss.
    pub lp_train_negatives: usize,
    /// Assert attention-simplex and type-isolation invariants every step.
    pub check_invariants: bool,
    /// Optional corruption of the training-visible graph.
    pub train_perturbation: Option<TrainPerturbation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::NodeClassification,
            variant: Variant::Full,
            dims: ModelDims {
                d0: 32,
                hidden: vec![32, 32],
            },
            weights: LossWeights::default(),
            difference_mode: DifferenceMode::Cooperative,
            n_contrast_negatives: 10,
            n_mi_negatives: 10,
            perturb_ratio: 0.1,
            resample_view_each_epoch: true,
            inner_curvature_target: false,
            split_ratios: (0.5, 0.25, 0.25),
            seed: 0,
            max_epochs: 1000,
            patience: 50,
            lr: 0.01,
            q_steps: 5,
            head_hidden: 32,
            club_hidden: 64,
            disc_hidden: 32,
            lp_train_negatives: 1,
            check_invariants: false,
            train_perturbation: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.hidden.is_empty() || self.dims.d0 == 0 || self.dims.hidden.contains(&0) {
            return Err(CoreError::Config("dimensions must be positive".into()));
        }
        if self.patience == 0 {
            return Err(CoreError::Config("patience must be >= 1".into()));
        }
        if self.weights.tau <= 0.0 {
            return Err(CoreError::Config("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.perturb_ratio) {
            return Err(CoreError::Config("perturbation ratio must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Per-epoch scalar record, one JSON object per line in the history file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub loss_components: BTreeMap<String, f64>,
    pub val_metric: f64,
    pub lr: f64,
    pub curvatures: BTreeMap<String, f64>,
}

/// Everything needed to restore and continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cfg: TrainConfig,
    pub graph_fingerprint: GraphFingerprint,
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub store: ParamStore,
    pub q_store: ParamStore,
    /// Attention caches of the original and the perturbed view.
    pub caches: [AttnCache; 2],
    /// Parameter snapshot at the best validation epoch.
    pub best_store: ParamStore,
    pub best_q_store: ParamStore,
    pub best_caches: [AttnCache; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFingerprint {
    pub node_count: usize,
    pub type_sizes: Vec<usize>,
    pub label_count: usize,
    pub relation_count: usize,
}

impl GraphFingerprint {
    pub fn of(g: &HetGraph) -> Self {
        GraphFingerprint {
            node_count: g.node_count(),
            type_sizes: (0..g.type_count()).map(|t| g.type_size(t)).collect(),
            label_count: g.label_names().len(),
            relation_count: g.relations().len(),
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Task supervision. All node indices live in the message graph's index
/// space; link-prediction relation indices of `train_pos` follow the message
/// graph, those of the held-out parts are irrelevant after negative sampling.
pub(crate) enum TaskData {
    Nc {
        train: Vec<(usize, usize)>,
        val: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
    },
    Lp {
        train_pos: Vec<(usize, usize, usize)>,
        val_pos: Vec<(usize, usize, usize)>,
        val_neg: Vec<(usize, usize, usize)>,
        test_pos: Vec<(usize, usize, usize)>,
        test_neg: Vec<(usize, usize, usize)>,
    },
}

/// Index translation by node id; identity when both graphs share the
/// canonical order.
pub(crate) fn index_map(from: &HetGraph, to: &HetGraph) -> Vec<usize> {
    if from
        .nodes()
        .iter()
        .zip(to.nodes())
        .all(|(a, b)| a.id == b.id)
        && from.node_count() == to.node_count()
    {
        return (0..from.node_count()).collect();
    }
    let lookup: BTreeMap<&str, usize> = to
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    from.nodes()
        .iter()
        .map(|n| *lookup.get(n.id.as_str()).expect("same node set"))
        .collect()
}

fn labeled_pairs(g: &HetGraph, nodes: &[usize], map: &[usize]) -> Vec<(usize, usize)> {
    nodes
        .iter()
        .map(|&i| (map[i], g.nodes()[i].label.expect("labeled split node")))
        .collect()
}

fn split_positives(
    splits: &SplitSet,
    map: &[usize],
    pick: impl Fn(&crate::hetgraph::split::RelationSplit) -> &Vec<(usize, usize)>,
) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (ri, rs) in splits.relations.iter().enumerate() {
        for &(s, d) in pick(rs) {
            out.push((ri, map[s], map[d]));
        }
    }
    out
}

pub(crate) fn task_data(
    g: &HetGraph,
    g_msg: &HetGraph,
    cfg: &TrainConfig,
    splits: &SplitSet,
) -> Result<TaskData> {
    let map = index_map(g, g_msg);
    match cfg.task {
        Task::NodeClassification => {
            let ls = splits
                .labels
                .as_ref()
                .ok_or_else(|| CoreError::GraphData("node classification needs labels".into()))?;
            Ok(TaskData::Nc {
                train: labeled_pairs(g, &ls.train, &map),
                val: labeled_pairs(g, &ls.val, &map),
                test: labeled_pairs(g, &ls.test, &map),
            })
        }
        Task::LinkPrediction => {
            // training supervision = exactly the training-visible edges
            let mut train_pos = Vec::new();
            for (ri, r) in g_msg.relations().iter().enumerate() {
                for &(s, d) in &r.edges {
                    train_pos.push((ri, s, d));
                }
            }
            // held-out parts come from the clean splits; negatives are
            // sampled in the clean graph (avoiding every true edge), then
            // translated into the message index space
            let val_pos_clean = split_positives(splits, &(0..g.node_count()).collect::<Vec<_>>(), |rs| &rs.val);
            let test_pos_clean = split_positives(splits, &(0..g.node_count()).collect::<Vec<_>>(), |rs| &rs.test);
            if train_pos.is_empty() || val_pos_clean.is_empty() || test_pos_clean.is_empty() {
                return Err(CoreError::GraphData(
                    "link prediction needs a nonempty split per part".into(),
                ));
            }
            let val_neg_clean =
                sample_negative_edges(g, &val_pos_clean, 1, mix(&[cfg.seed, 0xEA, 1]));
            let test_neg_clean =
                sample_negative_edges(g, &test_pos_clean, 1, mix(&[cfg.seed, 0xEA, 2]));
            let remap =
                |v: Vec<(usize, usize, usize)>| -> Vec<(usize, usize, usize)> {
                    v.into_iter()
                        .map(|(ri, s, d)| (ri, map[s], map[d]))
                        .collect()
                };
            Ok(TaskData::Lp {
                train_pos,
                val_pos: remap(val_pos_clean),
                val_neg: remap(val_neg_clean),
                test_pos: remap(test_pos_clean),
                test_neg: remap(test_neg_clean),
            })
        }
    }
}

/// The training-visible graph: the full graph for node classification, train
/// edges only for link prediction, then any configured robustness corruption.
pub fn message_graph(g: &HetGraph, cfg: &TrainConfig, splits: &SplitSet) -> Result<HetGraph> {
    let base = match cfg.task {
        Task::NodeClassification => g.clone(),
        Task::LinkPrediction => {
            let edits: BTreeMap<usize, Vec<(usize, usize)>> = splits
                .relations
                .iter()
                .enumerate()
                .map(|(ri, rs)| (ri, rs.train.clone()))
                .collect();
            g.with_relation_edges(&edits)
        }
    };
    match cfg.train_perturbation {
        None => Ok(base),
        Some(tp) => {
            let seed = mix(&[cfg.seed, 0x5E]);
            match tp.kind {
                PerturbKind::Structural => {
                    crate::hetgraph::perturb::perturb_structural(&base, tp.ratio, seed)
                }
                PerturbKind::EdgeTypes => {
                    crate::hetgraph::perturb::perturb_edge_types(&base, tp.ratio, seed)
                }
                PerturbKind::NodeTypes => {
                    crate::hetgraph::perturb::perturb_node_types(&base, tp.ratio, seed)
                }
            }
        }
    }
}

fn register_params(g: &HetGraph, cfg: &TrainConfig) -> (ParamStore, ParamStore) {
    let mut store = ParamStore::new();
    layers::init_encoder_params(&mut store, g, &cfg.dims, cfg.seed);
    let d = cfg.dims.out_dim();
    objectives::init_discriminator_params(&mut store, d, cfg.disc_hidden, cfg.seed);
    match cfg.task {
        Task::NodeClassification => objectives::init_classifier_params(
            &mut store,
            d,
            cfg.head_hidden,
            g.label_names().len().max(2),
            cfg.seed,
        ),
        Task::LinkPrediction => {
            objectives::init_predictor_params(&mut store, d, cfg.head_hidden, cfg.seed)
        }
    }
    let mut q_store = ParamStore::new();
    objectives::init_club_params(&mut q_store, d, d, cfg.club_hidden, cfg.seed);
    (store, q_store)
}

/// Embedding matrices read off an inference forward pass.
pub struct EmbeddingSet {
    pub fused: Array2<f64>,
    pub structural: Option<Array2<f64>>,
    pub semantic: Option<Array2<f64>>,
    pub curvature: f64,
}

struct ForwardNodes {
    z_fused: NodeId,
    z_st: Option<NodeId>,
    z_he: Option<NodeId>,
    he_main: Option<layers::HeteroOutput>,
    he_view: Option<layers::HeteroOutput>,
    c_final: NodeId,
}

/// One encoder pass. `view_graph` is the perturbed companion when the
/// wiring wants two views; in inference it is the original view itself.
#[allow(clippy::too_many_arguments)]
fn forward(
    t: &mut Tape,
    geo: &Geometry,
    bp: &BoundParams,
    cfg: &TrainConfig,
    wiring: &Wiring,
    g_msg: &HetGraph,
    sgraph: &StructuralGraph,
    hview: &HeteroView,
    view_pair: Option<(&HetGraph, &HeteroView)>,
    caches: &[AttnCache; 2],
) -> ForwardNodes {
    let n_ty = g_msg.type_count();
    let l_count = cfg.dims.layer_count();
    let curv = Curvatures::build(t, bp, l_count, n_ty);
    let c_final = curv.final_curvature();
    let opts = HeteroOptions {
        inner_curvature_target: cfg.inner_curvature_target,
    };

    let z_st = wiring
        .use_st
        .then(|| layers::structural_encode(t, geo, bp, &curv, sgraph, g_msg, &cfg.dims));

    let (he_main, he_view, z_he) = if wiring.use_he {
        let out1 = layers::hetero_encode(
            t, geo, bp, &curv, hview, g_msg, &cfg.dims, &caches[0], opts,
        );
        if wiring.two_views {
            let (vg, vv) = view_pair.expect("two-view wiring needs a companion view");
            let out2 =
                layers::hetero_encode(t, geo, bp, &curv, vv, vg, &cfg.dims, &caches[1], opts);
            let combined = layers::combine_views(t, geo, &out1.per_type, &out2.per_type, c_final);
            (Some(out1), Some(out2), Some(combined))
        } else {
            let stacked = out1.stacked(t);
            (Some(out1), None, Some(stacked))
        }
    } else {
        (None, None, None)
    };

    let z_fused = match (z_st, z_he) {
        (Some(st), Some(he)) => objectives::fuse(t, geo, st, he, c_final),
        (Some(st), None) => st,
        (None, Some(he)) => he,
        (None, None) => unreachable!("a variant always keeps at least one encoder"),
    };

    ForwardNodes {
        z_fused,
        z_st,
        z_he,
        he_main,
        he_view,
        c_final,
    }
}

fn task_loss(
    t: &mut Tape,
    geo: &Geometry,
    bp: &BoundParams,
    z: NodeId,
    c_final: NodeId,
    data: &TaskData,
    train_neg: &[(usize, usize, usize)],
) -> NodeId {
    match data {
        TaskData::Nc { train, .. } => {
            let rows: Vec<usize> = train.iter().map(|&(n, _)| n).collect();
            let labels: Vec<usize> = train.iter().map(|&(_, l)| l).collect();
            let logits = objectives::classifier_logits(t, geo, bp, z, c_final, &rows);
            objectives::nc_loss(t, logits, &labels)
        }
        TaskData::Lp { train_pos, .. } => {
            let pos: Vec<(usize, usize)> = train_pos.iter().map(|&(_, s, d)| (s, d)).collect();
            let neg: Vec<(usize, usize)> = train_neg.iter().map(|&(_, s, d)| (s, d)).collect();
            let pos_logits = objectives::predictor_logits(t, geo, bp, z, c_final, &pos);
            let neg_logits = objectives::predictor_logits(t, geo, bp, z, c_final, &neg);
            objectives::lp_loss(t, pos_logits, neg_logits)
        }
    }
}

/// Validation/test metric on held-out supervision given embedding values.
fn holdout_metric(
    store: &ParamStore,
    geo: &Geometry,
    z: &Array2<f64>,
    curvature: f64,
    data: &TaskData,
    test_part: bool,
) -> f64 {
    let mut t = Tape::new();
    let bp = BoundParams::bind(&mut t, store);
    let zc = t.constant(z.clone());
    let c = t.scalar(curvature);
    match data {
        TaskData::Nc { val, test, .. } => {
            let part = if test_part { test } else { val };
            let rows: Vec<usize> = part.iter().map(|&(n, _)| n).collect();
            let labels: Vec<usize> = part.iter().map(|&(_, l)| l).collect();
            let logits = objectives::classifier_logits(&mut t, geo, &bp, zc, c, &rows);
            let preds: Vec<usize> = t
                .value(logits)
                .outer_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(i, _)| i)
                        .unwrap()
                })
                .collect();
            f1_scores(&preds, &labels).0
        }
        TaskData::Lp {
            val_pos,
            val_neg,
            test_pos,
            test_neg,
            ..
        } => {
            let (pos, neg) = if test_part {
                (test_pos, test_neg)
            } else {
                (val_pos, val_neg)
            };
            let pairs: Vec<(usize, usize)> = pos
                .iter()
                .chain(neg.iter())
                .map(|&(_, s, d)| (s, d))
                .collect();
            let logits = objectives::predictor_logits(&mut t, geo, &bp, zc, c, &pairs);
            let scores: Vec<f64> = t.value(logits).iter().cloned().collect();
            let labels: Vec<bool> = (0..pos.len())
                .map(|_| true)
                .chain((0..neg.len()).map(|_| false))
                .collect();
            auc_ap(&scores, &labels).0
        }
    }
}

/// Inference-mode embeddings: the perturbed companion is replaced by the
/// original view, so the run is deterministic.
pub fn infer_embeddings(ckpt: &Checkpoint, g_full: &HetGraph) -> Result<EmbeddingSet> {
    let cfg = &ckpt.cfg;
    let splits = make_splits(g_full, cfg.split_ratios, cfg.seed)?;
    let g_msg = message_graph(g_full, cfg, &splits)?;
    infer_embeddings_on(ckpt, &g_msg)
}

/// Same, but over an explicitly provided message graph.
pub fn infer_embeddings_on(ckpt: &Checkpoint, g_msg: &HetGraph) -> Result<EmbeddingSet> {
    let cfg = &ckpt.cfg;
    let wiring = apply_variant(cfg.variant);
    let geo = Geometry::new(wiring.geometry);
    let sgraph = StructuralGraph::new(g_msg);
    let hview = HeteroView::new(g_msg);
    let mut t = Tape::new();
    let bp = BoundParams::bind(&mut t, &ckpt.best_store);
    let nodes = forward(
        &mut t,
        &geo,
        &bp,
        cfg,
        &wiring,
        g_msg,
        &sgraph,
        &hview,
        Some((g_msg, &hview)),
        &ckpt.best_caches,
    );
    Ok(EmbeddingSet {
        fused: t.value(nodes.z_fused).clone(),
        structural: nodes.z_st.map(|id| t.value(id).clone()),
        semantic: nodes.z_he.map(|id| t.value(id).clone()),
        curvature: t.scalar_value(nodes.c_final),
    })
}

/// Score helper used by evaluation: class predictions for given rows.
pub fn classify_rows(
    ckpt: &Checkpoint,
    z: &Array2<f64>,
    curvature: f64,
    rows: &[usize],
) -> Vec<usize> {
    let wiring = apply_variant(ckpt.cfg.variant);
    let geo = Geometry::new(wiring.geometry);
    let mut t = Tape::new();
    let bp = BoundParams::bind(&mut t, &ckpt.best_store);
    let zc = t.constant(z.clone());
    let c = t.scalar(curvature);
    let logits = objectives::classifier_logits(&mut t, &geo, &bp, zc, c, rows);
    t.value(logits)
        .outer_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

/// Score helper used by evaluation: link probabilities for node pairs.
pub fn score_pairs(
    ckpt: &Checkpoint,
    z: &Array2<f64>,
    curvature: f64,
    pairs: &[(usize, usize)],
) -> Vec<f64> {
    let wiring = apply_variant(ckpt.cfg.variant);
    let geo = Geometry::new(wiring.geometry);
    let mut t = Tape::new();
    let bp = BoundParams::bind(&mut t, &ckpt.best_store);
    let zc = t.constant(z.clone());
    let c = t.scalar(curvature);
    let logits = objectives::predictor_logits(&mut t, &geo, &bp, zc, c, pairs);
    let sig = t.sigmoid(logits);
    t.value(sig).iter().cloned().collect()
}

/// Train from scratch.
pub fn train(g: &HetGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(g, cfg, None)
}

/// Train, optionally resuming from a checkpoint produced by the same
/// `(graph, config)` pair.
pub fn train_from(
    g: &HetGraph,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let wiring = apply_variant(cfg.variant);
    let mut weights = cfg.weights;
    if matches!(cfg.variant, Variant::WoCl) {
        weights.lambda3 = 0.0;
    }
    if matches!(cfg.variant, Variant::WoDisentangling) {
        weights.lambda2 = 0.0;
    }

    let splits = make_splits(g, cfg.split_ratios, cfg.seed)?;
    let g_msg = message_graph(g, cfg, &splits)?;
    let data = task_data(g, &g_msg, cfg, &splits)?;
    let sgraph = StructuralGraph::new(&g_msg);
    let hview = HeteroView::new(&g_msg);
    let n_nodes = g_msg.node_count();
    let n_ty = g_msg.type_count();
    let l_count = cfg.dims.layer_count();

    let fingerprint = GraphFingerprint::of(g);
    let (mut store, mut q_store, mut caches, start_epoch, mut best_metric, mut best_epoch);
    let (mut best_store, mut best_q_store, mut best_caches);
    match resume {
        Some(ckpt) => {
            if ckpt.cfg != *cfg {
                return Err(CoreError::Checkpoint(
                    "resume config differs from checkpoint config".into(),
                ));
            }
            if ckpt.graph_fingerprint != fingerprint {
                return Err(CoreError::Checkpoint(
                    "resume graph differs from checkpoint graph".into(),
                ));
            }
            store = ckpt.store;
            q_store = ckpt.q_store;
            caches = ckpt.caches;
            start_epoch = ckpt.epoch;
            best_metric = ckpt.best_metric;
            best_epoch = ckpt.best_epoch;
            best_store = ckpt.best_store;
            best_q_store = ckpt.best_q_store;
            best_caches = ckpt.best_caches;
        }
        None => {
            let (s, q) = register_params(&g_msg, cfg);
            store = s;
            q_store = q;
            caches = [
                layers::empty_cache(l_count, n_ty),
                layers::empty_cache(l_count, n_ty),
            ];
            start_epoch = 0;
            best_metric = f64::NEG_INFINITY;
            best_epoch = 0;
            best_store = store.clone();
            best_q_store = q_store.clone();
            best_caches = caches.clone();
        }
    }

    let geo = Geometry::new(wiring.geometry);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    };
    let mut history: Vec<EpochRecord> = Vec::new();

    for epoch in start_epoch..cfg.max_epochs {
        // fresh (or fixed) perturbed companion view
        let view = if wiring.two_views {
            let view_seed = if cfg.resample_view_each_epoch {
                mix(&[cfg.seed, 0x7E, epoch as u64])
            } else {
                mix(&[cfg.seed, 0x7E, 0])
            };
            let pv = perturb_edges(&g_msg, cfg.perturb_ratio, view_seed)?;
            let hv = HeteroView::new(&pv.graph);
            Some((pv.graph, hv))
        } else {
            None
        };

        let mut t = Tape::new();
        let bp = BoundParams::bind(&mut t, &store);
        let nodes = forward(
            &mut t,
            &geo,
            &bp,
            cfg,
            &wiring,
            &g_msg,
            &sgraph,
            &hview,
            view.as_ref().map(|(vg, vv)| (vg, vv)),
            &caches,
        );

        // fit the conditional on this epoch's detached embeddings, then
        // evaluate the bound with the refreshed (frozen) parameters
        let mut components: BTreeMap<String, f64> = BTreeMap::new();
        let l_dis = if wiring.use_disentangle && weights.lambda2 != 0.0 {
            let st = nodes.z_st.expect("disentangling needs both encoders");
            let he = nodes.z_he.expect("disentangling needs both encoders");
            let st_tan = geo.logmap0(&mut t, st, nodes.c_final);
            let he_tan = geo.logmap0(&mut t, he, nodes.c_final);
            let st_val = t.value(st_tan).clone();
            let he_val = t.value(he_tan).clone();
            for _ in 0..cfg.q_steps {
                objectives::q_fit_step(&mut q_store, &st_val, &he_val, &adam);
            }
            let q = objectives::bind_club(&mut t, &q_store, false);
            let negs = objectives::sample_club_negatives(
                n_nodes,
                cfg.n_mi_negatives,
                mix(&[cfg.seed, 0xC1, epoch as u64]),
            );
            let l_mi = objectives::club_mi_loss(&mut t, &q, st_tan, he_tan, Some(&negs));
            let d = objectives::bind_discriminator(&bp);
            let l_df = objectives::discriminator_loss(
                &mut t,
                &geo,
                &d,
                st,
                he,
                nodes.c_final,
                cfg.difference_mode,
            );
            components.insert("mi".into(), t.scalar_value(l_mi));
            components.insert("df".into(), t.scalar_value(l_df));
            Some(objectives::disentangle_loss(
                &mut t,
                l_mi,
                l_df,
                weights.lambda_dis,
            ))
        } else {
            None
        };

        let l_cl = if weights.lambda3 != 0.0 && (wiring.contrast_he_views || wiring.contrast_st_he)
        {
            let negs = objectives::sample_infonce_negatives(
                n_nodes,
                cfg.n_contrast_negatives,
                mix(&[cfg.seed, 0xCE, epoch as u64]),
            );
            let sum = if wiring.contrast_st_he {
                let st = nodes.z_st.expect("st/he contrast needs both");
                let he = nodes.z_he.expect("st/he contrast needs both");
                objectives::infonce_loss(&mut t, st, he, weights.tau, &negs)
            } else {
                let a = nodes.he_main.as_ref().unwrap().per_type.clone();
                let b = nodes.he_view.as_ref().unwrap().per_type.clone();
                let sa = t.concat_rows(&a);
                let sb = t.concat_rows(&b);
                objectives::infonce_loss(&mut t, sa, sb, weights.tau, &negs)
            };
            // the contrastive term is a sum over anchors; weight its
            // per-node mean so lambda3 is independent of graph size
            let node = t.affine(sum, 1.0 / n_nodes as f64, 0.0);
            components.insert("cl".into(), t.scalar_value(node));
            Some(node)
        } else {
            None
        };

        // task supervision (fresh link negatives each epoch, sampled against
        // the training-visible edge set)
        let train_neg = match &data {
            TaskData::Lp { train_pos, .. } => sample_negative_edges(
                &g_msg,
                train_pos,
                cfg.lp_train_negatives,
                mix(&[cfg.seed, 0x1B, epoch as u64]),
            ),
            TaskData::Nc { .. } => Vec::new(),
        };
        let l_dt = task_loss(&mut t, &geo, &bp, nodes.z_fused, nodes.c_final, &data, &train_neg);
        components.insert("dt".into(), t.scalar_value(l_dt));
        let both_parts = nodes.z_st.is_some() && nodes.z_he.is_some();
        let l_dt_st = (both_parts && weights.lambda1 != 0.0)
            .then(|| task_loss(&mut t, &geo, &bp, nodes.z_st.unwrap(), nodes.c_final, &data, &train_neg));
        let l_dt_se = (both_parts && weights.lambda1 != 0.0)
            .then(|| task_loss(&mut t, &geo, &bp, nodes.z_he.unwrap(), nodes.c_final, &data, &train_neg));
        if let Some(id) = l_dt_st {
            components.insert("dt_st".into(), t.scalar_value(id));
        }
        if let Some(id) = l_dt_se {
            components.insert("dt_se".into(), t.scalar_value(id));
        }

        let total = objectives::total_loss(&mut t, l_dt, l_dt_st, l_dt_se, l_dis, l_cl, &weights);
        let loss_value = t.scalar_value(total);
        if !loss_value.is_finite() {
            return Err(CoreError::Diverged {
                epoch,
                what: format!("loss = {loss_value}"),
            });
        }

        if cfg.check_invariants {
            check_attention_simplex(&t, &nodes)?;
            if let Some(st_loss) = l_dt_st {
                check_type_isolation(&t, &bp, &store, st_loss, epoch)?;
            }
        }

        let grads = t.backward(total);
        let pairs = bp.collect_grads(&grads);
        store.adam_step(&pairs, &adam);

        // cache refresh after the optimizer step
        if let Some(out1) = &nodes.he_main {
            caches[0] = layers::snapshot_aggregates(&t, out1);
        }
        if let Some(out2) = &nodes.he_view {
            caches[1] = layers::snapshot_aggregates(&t, out2);
        }

        // post-step evaluation pass for early stopping
        let eval_ckpt_like = infer_with(&store, cfg, &wiring, &g_msg, &sgraph, &hview, &caches);
        let val = holdout_metric(
            &store,
            &geo,
            &eval_ckpt_like.fused,
            eval_ckpt_like.curvature,
            &data,
            false,
        );

        let mut curvatures = BTreeMap::new();
        for e in store.entries() {
            if e.name.contains("curv") {
                curvatures.insert(e.name.clone(), softplus(e.value[(0, 0)]));
            }
        }
        history.push(EpochRecord {
            epoch,
            loss: loss_value,
            loss_components: components,
            val_metric: val,
            lr: cfg.lr,
            curvatures,
        });

        if val > best_metric {
            best_metric = val;
            best_epoch = epoch;
            best_store = store.clone();
            best_q_store = q_store.clone();
            best_caches = caches.clone();
        }
        if epoch - best_epoch >= cfg.patience {
            log::info!("early stop at epoch {epoch}, best {best_metric:.4} at {best_epoch}");
            break;
        }
    }

    let final_epoch = history.last().map(|r| r.epoch + 1).unwrap_or(start_epoch);
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            cfg: cfg.clone(),
            graph_fingerprint: fingerprint,
            epoch: final_epoch,
            best_epoch,
            best_metric,
            store,
            q_store,
            caches,
            best_store,
            best_q_store,
            best_caches,
        },
        history,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn infer_with(
    store: &ParamStore,
    cfg: &TrainConfig,
    wiring: &Wiring,
    g_msg: &HetGraph,
    sgraph: &StructuralGraph,
    hview: &HeteroView,
    caches: &[AttnCache; 2],
) -> EmbeddingSet {
    let geo = Geometry::new(wiring.geometry);
    let mut t = Tape::new();
    let bp = BoundParams::bind(&mut t, store);
    let nodes = forward(
        &mut t,
        &geo,
        &bp,
        cfg,
        wiring,
        g_msg,
        sgraph,
        hview,
        Some((g_msg, hview)),
        caches,
    );
    EmbeddingSet {
        fused: t.value(nodes.z_fused).clone(),
        structural: nodes.z_st.map(|id| t.value(id).clone()),
        semantic: nodes.z_he.map(|id| t.value(id).clone()),
        curvature: t.scalar_value(nodes.c_final),
    }
}

fn check_attention_simplex(t: &Tape, nodes: &ForwardNodes) -> Result<()> {
    for out in [&nodes.he_main, &nodes.he_view].into_iter().flatten() {
        for per_ty in &out.attention {
            for rho in per_ty.iter().flatten() {
                for row in t.value(*rho).outer_iter() {
                    let s: f64 = row.sum();
                    if (s - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
                        return Err(CoreError::Diverged {
                            epoch: 0,
                            what: format!("attention simplex violated: row sum {s}"),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// The structural-only task term must not reach any typed-encoder parameter.
fn check_type_isolation(
    t: &Tape,
    bp: &BoundParams,
    store: &ParamStore,
    st_loss: NodeId,
    epoch: usize,
) -> Result<()> {
    let grads = t.backward(st_loss);
    for e in store.entries() {
        if e.name.starts_with("he.") || e.name.starts_with("q.") || e.name.starts_with("disc.") {
            if let Some(g) = bp.grad_of(&grads, &e.name) {
                if g.iter().any(|&v| v != 0.0) {
                    return Err(CoreError::Diverged {
                        epoch,
                        what: format!("type isolation violated at {}", e.name),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Append the history as JSON lines.
pub fn write_history_jsonl(history: &[EpochRecord], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for rec in history {
        let line = serde_json::to_string(rec)
            .map_err(|e| CoreError::Config(format!("history serialization: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    fn small_graph() -> HetGraph {
        generate(&SyntheticConfig {
            nodes_a: 40,
            nodes_b: 40,
            nodes_c: 14,
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_cfg(task: Task) -> TrainConfig {
        TrainConfig {
            task,
            dims: ModelDims {
                d0: 8,
                hidden: vec![8, 8],
            },
            head_hidden: 8,
            club_hidden: 16,
            disc_hidden: 8,
            max_epochs: 3,
            patience: 5,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_checkpoint() {
        let g = small_graph();
        let mut cfg = small_cfg(Task::NodeClassification);
        cfg.max_epochs = 0;
        let out = train(&g, &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.checkpoint.epoch, 0);
        assert!(out.checkpoint.store.len() > 0);
    }

    #[test]
    fn same_seed_identical_history_and_params() {
        let g = small_graph();
        let cfg = small_cfg(Task::NodeClassification);
        let a = train(&g, &cfg).unwrap();
        let b = train(&g, &cfg).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.loss, y.loss);
            assert_eq!(x.val_metric, y.val_metric);
        }
        assert_eq!(a.checkpoint.store, b.checkpoint.store);
        assert_eq!(a.checkpoint.q_store, b.checkpoint.q_store);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let g = small_graph();
        let mut cfg = small_cfg(Task::LinkPrediction);
        cfg.max_epochs = 4;
        let full = train(&g, &cfg).unwrap();

        let mut cfg_half = cfg.clone();
        cfg_half.max_epochs = 2;
        let half = train(&g, &cfg_half).unwrap();
        let mut resumed_ckpt = half.checkpoint;
        resumed_ckpt.cfg = cfg.clone(); // same run, longer budget
        let resumed = train_from(&g, &cfg, Some(resumed_ckpt)).unwrap();

        assert_eq!(full.checkpoint.store, resumed.checkpoint.store);
        let tail: Vec<f64> = full.history[2..].iter().map(|r| r.loss).collect();
        let resumed_losses: Vec<f64> = resumed.history.iter().map(|r| r.loss).collect();
        assert_eq!(tail, resumed_losses);
    }

    #[test]
    fn variants_all_run_one_epoch() {
        let g = small_graph();
        for v in [
            Variant::Full,
            Variant::WoSt,
            Variant::WoHe,
            Variant::WoCl,
            Variant::WoBall,
            Variant::WithClPrime,
            Variant::WoDisentangling,
        ] {
            let mut cfg = small_cfg(Task::NodeClassification);
            cfg.variant = v;
            cfg.max_epochs = 1;
            let out = train(&g, &cfg).unwrap_or_else(|e| panic!("{v:?}: {e}"));
            assert_eq!(out.history.len(), 1, "{v:?}");
            assert!(out.history[0].loss.is_finite());
        }
    }

    #[test]
    fn wo_cl_has_no_view_sensitivity() {
        // the contrastive term is absent; the loss must carry no "cl"
        // component and use a single view
        let g = small_graph();
        let mut cfg = small_cfg(Task::NodeClassification);
        cfg.variant = Variant::WoCl;
        cfg.max_epochs = 1;
        let out = train(&g, &cfg).unwrap();
        assert!(!out.history[0].loss_components.contains_key("cl"));
    }

    #[test]
    fn curvatures_stay_positive_through_training() {
        let g = small_graph();
        let mut cfg = small_cfg(Task::NodeClassification);
        cfg.max_epochs = 5;
        let out = train(&g, &cfg).unwrap();
        for rec in &out.history {
            for (&ref name, &c) in &rec.curvatures {
                assert!(c > 0.0, "curvature {name} went nonpositive: {c}");
            }
        }
    }

    #[test]
    fn invariant_checks_pass_on_small_run() {
        let g = small_graph();
        let mut cfg = small_cfg(Task::NodeClassification);
        cfg.check_invariants = true;
        cfg.max_epochs = 3;
        train(&g, &cfg).unwrap();
    }

    #[test]
    fn geometry_call_counts_match_between_full_and_wo_ball() {
        // the two variants must walk the same code path, differing only in
        // the geometry kernels
        let g = small_graph();
        let count_for = |variant: Variant| {
            let mut cfg = small_cfg(Task::NodeClassification);
            cfg.variant = variant;
            cfg.max_epochs = 1;
            let splits = make_splits(&g, cfg.split_ratios, cfg.seed).unwrap();
            let g_msg = message_graph(&g, &cfg, &splits).unwrap();
            let sgraph = StructuralGraph::new(&g_msg);
            let hview = HeteroView::new(&g_msg);
            let (store, _) = register_params(&g_msg, &cfg);
            let wiring = apply_variant(cfg.variant);
            let geo = Geometry::new(wiring.geometry);
            let caches = [
                layers::empty_cache(2, g.type_count()),
                layers::empty_cache(2, g.type_count()),
            ];
            let mut t = Tape::new();
            let bp = BoundParams::bind(&mut t, &store);
            let _ = forward(
                &mut t,
                &geo,
                &bp,
                &cfg,
                &wiring,
                &g_msg,
                &sgraph,
                &hview,
                Some((&g_msg, &hview)),
                &caches,
            );
            geo.counters()
        };
        assert_eq!(count_for(Variant::Full), count_for(Variant::WoBall));
    }
}
