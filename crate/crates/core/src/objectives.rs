//! Loss terms and fusion.
//!
//! - InfoNCE cross-view contrast with cosine similarity taken directly on
//!   ball coordinates (the ball model is conformal, so angles agree with the
//!   Euclidean ones).
//! - A CLUB-style variational upper bound on the mutual information between
//!   the structural and typed embeddings, with its own small Gaussian
//!   conditional network fitted by likelihood maximization on detached
//!   embeddings.
//! - A hyperbolic MLP discriminator separating the two embedding families.
//! - Cross-entropy node classification and sigmoid link prediction heads on
//!   tangent coordinates.
//! - Row-wise Möbius fusion of the structural and semantic matrices.

use std::rc::Rc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{AdamConfig, NodeId, ParamStore, Tape};
use crate::geometry::Geometry;
use crate::layers::BoundParams;
use crate::rng::{rng_from, tag};

const LN_2PI: f64 = 1.8378770664093453;
/// log-variance clamp for the variational conditional.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Loss weights; defaults follow the trained configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_dis: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.2,
            lambda2: 0.5,
            lambda3: 0.05,
            lambda_dis: 0.5,
            tau: 0.5,
        }
    }
}

// ---------------------------------------------------------------------------
// InfoNCE
// ---------------------------------------------------------------------------

/// Per anchor: `n_neg` distinct uniform counterparts `j != i` (all others when
/// the graph is small).
pub fn sample_infonce_negatives(n_nodes: usize, n_neg: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_from(&[seed, tag::INFONCE]);
    (0..n_nodes)
        .map(|i| {
            if n_neg >= n_nodes.saturating_sub(1) {
                return (0..n_nodes).filter(|&j| j != i).collect();
            }
            let mut pool: Vec<usize> = (0..n_nodes).filter(|&j| j != i).collect();
            pool.shuffle(&mut rng);
            pool.truncate(n_neg);
            pool
        })
        .collect()
}

fn normalize_rows(t: &mut Tape, z: NodeId) -> NodeId {
    let n = t.row_norm(z);
    let n = t.clamp_min(n, 1e-15);
    // zero rows stay zero and behave as cosine-similarity 0
    if t.value(z).outer_iter().any(|r| r.dot(&r) == 0.0) {
        log::warn!("cosine similarity on a zero-norm embedding row; treating as 0");
    }
    t.div(z, n)
}

/// Cross-view contrastive loss. Per anchor `i` the denominator holds the
/// positive `(z_i, z'_i)` plus the sampled counterparts `(z_i, z'_j)`.
/// Summed over anchors; non-negative because the positive is in its own
/// denominator.
pub fn infonce_loss(
    t: &mut Tape,
    z: NodeId,
    z_prime: NodeId,
    tau: f64,
    negatives: &[Vec<usize>],
) -> NodeId {
    assert!(tau > 0.0, "temperature must be positive");
    let n = t.value(z).nrows();
    assert_eq!(negatives.len(), n);
    let zn = normalize_rows(t, z);
    let zp = normalize_rows(t, z_prime);

    let width = negatives.iter().map(|v| v.len()).max().unwrap_or(0) + 1;
    let mut anchor_idx = Vec::with_capacity(n * width);
    let mut cpt_idx = Vec::with_capacity(n * width);
    for (i, negs) in negatives.iter().enumerate() {
        anchor_idx.push(i);
        cpt_idx.push(i); // positive first
        for &j in negs {
            anchor_idx.push(i);
            cpt_idx.push(j);
        }
        // ragged rows (possible only on degenerate graphs) are padded by
        // repeating the positive
        for _ in negs.len() + 1..width {
            anchor_idx.push(i);
            cpt_idx.push(i);
        }
    }
    let ga = t.gather_rows(zn, Rc::new(anchor_idx));
    let gc = t.gather_rows(zp, Rc::new(cpt_idx));
    let sims = t.row_dot(ga, gc);
    let scaled = t.affine(sims, 1.0 / tau, 0.0);
    let mat = t.reshape(scaled, n, width);
    let lse = t.logsumexp_rows(mat);
    let pos = t.slice_cols(mat, 0, 1);
    let per_node = t.sub(lse, pos);
    t.sum_all(per_node)
}

// ---------------------------------------------------------------------------
// CLUB mutual-information bound
// ---------------------------------------------------------------------------

/// Tape handles for the variational conditional `q(y|x)`; bind trainable or
/// frozen depending on which side of the alternating schedule is running.
pub struct QNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w_mu: NodeId,
    pub b_mu: NodeId,
    pub w_lv: NodeId,
    pub b_lv: NodeId,
}

/// Register the conditional network: one shared hidden layer, mean and
/// log-variance heads over the target tangent dimension.
pub fn init_club_params(
    store: &mut ParamStore,
    in_dim: usize,
    out_dim: usize,
    hidden: usize,
    seed: u64,
) {
    let mut rng = rng_from(&[seed, tag::CLUB]);
    let mut xavier = |r: usize, c: usize| {
        let bound = (6.0 / (r + c) as f64).sqrt();
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-bound..bound))
    };
    store.register("q.w1", xavier(in_dim, hidden));
    store.register("q.b1", Array2::zeros((1, hidden)));
    store.register("q.w_mu", xavier(hidden, out_dim));
    store.register("q.b_mu", Array2::zeros((1, out_dim)));
    store.register("q.w_lv", xavier(hidden, out_dim));
    store.register("q.b_lv", Array2::zeros((1, out_dim)));
}

pub fn bind_club(t: &mut Tape, store: &ParamStore, trainable: bool) -> QNodes {
    let mut grab = |name: &str| {
        let v = store.get(name).clone();
        if trainable {
            t.leaf(v)
        } else {
            t.constant(v)
        }
    };
    QNodes {
        w1: grab("q.w1"),
        b1: grab("q.b1"),
        w_mu: grab("q.w_mu"),
        b_mu: grab("q.b_mu"),
        w_lv: grab("q.w_lv"),
        b_lv: grab("q.b_lv"),
    }
}

fn q_heads(t: &mut Tape, q: &QNodes, x: NodeId) -> (NodeId, NodeId) {
    let xw = t.matmul(x, q.w1);
    let pre = t.add(xw, q.b1);
    let h = t.relu(pre);
    let mu_pre = t.matmul(h, q.w_mu);
    let mu = t.add(mu_pre, q.b_mu);
    let lv_pre = t.matmul(h, q.w_lv);
    let lv_raw = t.add(lv_pre, q.b_lv);
    let lv = t.clamp(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP);
    (mu, lv)
}

/// Row-wise `log q(y_i | x_i)` for paired tangent matrices: `(n,1)`.
pub fn club_log_q(t: &mut Tape, q: &QNodes, x: NodeId, y: NodeId) -> NodeId {
    let (mu, lv) = q_heads(t, q, x);
    let diff = t.sub(y, mu);
    let sq = t.mul(diff, diff);
    let neg_lv = t.neg(lv);
    let inv_var = t.exp(neg_lv);
    let quad = t.mul(sq, inv_var);
    let inner = t.add(quad, lv);
    let inner = t.affine(inner, 1.0, LN_2PI);
    let row = t.sum_rows(inner);
    t.affine(row, -0.5, 0.0)
}

/// The full matrix `L[i][j] = log q(y_j | x_i)`, used when the negative set
/// is the whole population.
pub fn club_log_q_matrix(t: &mut Tape, q: &QNodes, x: NodeId, y: NodeId) -> NodeId {
    let (mu, lv) = q_heads(t, q, x);
    let neg_lv = t.neg(lv);
    let e = t.exp(neg_lv); // (n,d) precision
    let y_sq = t.mul(y, y);
    let y_sq_t = t.transpose(y_sq);
    let term1 = t.matmul(e, y_sq_t); // (n,n)
    let mu_e = t.mul(mu, e);
    let y_t = t.transpose(y);
    let term2 = t.matmul(mu_e, y_t); // (n,n)
    let mu_sq = t.mul(mu, mu);
    let mu_sq_e = t.mul(mu_sq, e);
    let lv_c = t.affine(lv, 1.0, LN_2PI);
    let bias_terms = t.add(mu_sq_e, lv_c);
    let term3 = t.sum_rows(bias_terms); // (n,1), broadcast over columns
    let two_term2 = t.affine(term2, -2.0, 0.0);
    let s = t.add(term1, two_term2);
    let s = t.add(s, term3);
    t.affine(s, -0.5, 0.0)
}

/// Uniform negative indices for the bound; rectangular `n x n_neg`.
pub fn sample_club_negatives(n_nodes: usize, n_neg: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_from(&[seed, tag::CLUB, 1]);
    (0..n_nodes)
        .map(|_| (0..n_neg).map(|_| rng.gen_range(0..n_nodes)).collect())
        .collect()
}

/// Sample-based bound: `mean_i [ log q(y_i|x_i) - mean_j log q(y_j|x_i) ]`.
/// `negatives = None` evaluates the exact full-population form.
pub fn club_mi_loss(
    t: &mut Tape,
    q: &QNodes,
    x_tan: NodeId,
    y_tan: NodeId,
    negatives: Option<&[Vec<usize>]>,
) -> NodeId {
    let n = t.value(x_tan).nrows();
    let pos = club_log_q(t, q, x_tan, y_tan); // (n,1)
    let neg_mean = match negatives {
        None => {
            let full = club_log_q_matrix(t, q, x_tan, y_tan);
            let s = t.sum_rows(full);
            t.affine(s, 1.0 / n as f64, 0.0)
        }
        Some(negs) => {
            assert_eq!(negs.len(), n);
            let k = negs[0].len();
            let mut x_idx = Vec::with_capacity(n * k);
            let mut y_idx = Vec::with_capacity(n * k);
            for (i, row) in negs.iter().enumerate() {
                assert_eq!(row.len(), k, "negative lists must be rectangular");
                for &j in row {
                    x_idx.push(i);
                    y_idx.push(j);
                }
            }
            let gx = t.gather_rows(x_tan, Rc::new(x_idx));
            let gy = t.gather_rows(y_tan, Rc::new(y_idx));
            let lq = club_log_q(t, q, gx, gy); // (n*k,1)
            let mat = t.reshape(lq, n, k);
            let s = t.sum_rows(mat);
            t.affine(s, 1.0 / k as f64, 0.0)
        }
    };
    let diff = t.sub(pos, neg_mean);
    t.mean_all(diff)
}

/// One likelihood-maximization step for `q` on detached embeddings. Returns
/// the mean log-likelihood before the step.
pub fn q_fit_step(
    q_store: &mut ParamStore,
    x_tan: &Array2<f64>,
    y_tan: &Array2<f64>,
    adam: &AdamConfig,
) -> f64 {
    let mut t = Tape::new();
    let q = bind_club(&mut t, q_store, true);
    let x = t.constant(x_tan.clone());
    let y = t.constant(y_tan.clone());
    let ll = club_log_q(&mut t, &q, x, y);
    let mean_ll = t.mean_all(ll);
    let loss = t.neg(mean_ll);
    let grads = t.backward(loss);
    let pairs: Vec<(usize, Array2<f64>)> = ["q.w1", "q.b1", "q.w_mu", "q.b_mu", "q.w_lv", "q.b_lv"]
        .iter()
        .zip([q.w1, q.b1, q.w_mu, q.b_mu, q.w_lv, q.b_lv])
        .filter_map(|(name, id)| {
            grads
                .get(id)
                .map(|g| (q_store.index_of(name).unwrap(), g.clone()))
        })
        .collect();
    let value = t.scalar_value(mean_ll);
    q_store.adam_step(&pairs, adam);
    value
}

/// Plain-value CLUB estimate with the current `q` (no gradients), full
/// population negatives.
pub fn club_estimate(q_store: &ParamStore, x_tan: &Array2<f64>, y_tan: &Array2<f64>) -> f64 {
    let mut t = Tape::new();
    let q = bind_club(&mut t, q_store, false);
    let x = t.constant(x_tan.clone());
    let y = t.constant(y_tan.clone());
    let v = club_mi_loss(&mut t, &q, x, y, None);
    t.scalar_value(v)
}

// ---------------------------------------------------------------------------
// discriminator
// ---------------------------------------------------------------------------

/// How encoder gradients relate to the discriminator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum DifferenceMode {
    /// Encoders and discriminator jointly minimize the separation BCE.
    #[default]
    Cooperative,
    /// The discriminator minimizes the BCE while encoders receive reversed
    /// gradients (maximize it).
    Adversarial,
}

pub struct DiscNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

/// Register the two-layer hyperbolic discriminator: Möbius affine layer,
/// tangent ReLU, linear scalar head.
pub fn init_discriminator_params(store: &mut ParamStore, dim: usize, hidden: usize, seed: u64) {
    let mut rng = rng_from(&[seed, tag::CLUB, 7]);
    let mut xavier = |r: usize, c: usize| {
        let bound = (6.0 / (r + c) as f64).sqrt();
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-bound..bound))
    };
    store.register("disc.w1", xavier(dim, hidden));
    store.register("disc.b1", Array2::zeros((1, hidden)));
    store.register("disc.w2", xavier(hidden, 1));
    store.register("disc.b2", Array2::zeros((1, 1)));
}

pub fn bind_discriminator(bp: &BoundParams) -> DiscNodes {
    DiscNodes {
        w1: bp.node("disc.w1"),
        b1: bp.node("disc.b1"),
        w2: bp.node("disc.w2"),
        b2: bp.node("disc.b2"),
    }
}

/// Raw scores `s` of the discriminator; `sigmoid(s)` is the probability of
/// the "typed embedding" class.
pub fn discriminator_logits(
    t: &mut Tape,
    geo: &Geometry,
    d: &DiscNodes,
    z: NodeId,
    c_l: NodeId,
) -> NodeId {
    let wz = geo.matvec(t, z, d.w1, c_l);
    let b_ball = geo.expmap0(t, d.b1, c_l);
    let h_ball = geo.mobius_add(t, wz, b_ball, c_l);
    let h_tan = geo.logmap0(t, h_ball, c_l);
    let h = t.relu(h_tan);
    let s = t.matmul(h, d.w2);
    t.add(s, d.b2)
}

/// Binary cross-entropy over both embedding matrices, labels: structural 0,
/// typed 1. In adversarial mode the embeddings pass a gradient-reversal node
/// first, so the discriminator still descends the BCE while the encoders
/// ascend it.
pub fn discriminator_loss(
    t: &mut Tape,
    geo: &Geometry,
    d: &DiscNodes,
    z_st: NodeId,
    z_he: NodeId,
    c_l: NodeId,
    mode: DifferenceMode,
) -> NodeId {
    let (a, b) = match mode {
        DifferenceMode::Cooperative => (z_st, z_he),
        DifferenceMode::Adversarial => (t.grad_reverse(z_st), t.grad_reverse(z_he)),
    };
    let s0 = discriminator_logits(t, geo, d, a, c_l); // label 0
    let s1 = discriminator_logits(t, geo, d, b, c_l); // label 1
    // bce(s, y) = softplus(s) - y*s
    let l0 = t.softplus(s0);
    let sp1 = t.softplus(s1);
    let l1 = t.sub(sp1, s1);
    let both = t.concat_rows(&[l0, l1]);
    t.mean_all(both)
}

/// `L_dis = L_mi + lambda_dis * L_df`.
pub fn disentangle_loss(t: &mut Tape, l_mi: NodeId, l_df: NodeId, lambda_dis: f64) -> NodeId {
    let scaled = t.affine(l_df, lambda_dis, 0.0);
    t.add(l_mi, scaled)
}

// ---------------------------------------------------------------------------
// fusion and task heads
// ---------------------------------------------------------------------------

/// Row-wise Möbius fusion of the structural and semantic matrices.
pub fn fuse(t: &mut Tape, geo: &Geometry, z_st: NodeId, z_se: NodeId, c_l: NodeId) -> NodeId {
    assert_eq!(
        t.value(z_st).dim(),
        t.value(z_se).dim(),
        "fuse shape mismatch"
    );
    geo.mobius_add(t, z_st, z_se, c_l)
}

pub fn init_classifier_params(
    store: &mut ParamStore,
    in_dim: usize,
    hidden: usize,
    classes: usize,
    seed: u64,
) {
    let mut rng = rng_from(&[seed, tag::INIT, 21]);
    let mut xavier = |r: usize, c: usize| {
        let bound = (6.0 / (r + c) as f64).sqrt();
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-bound..bound))
    };
    store.register("clf.w1", xavier(in_dim, hidden));
    store.register("clf.b1", Array2::zeros((1, hidden)));
    store.register("clf.w2", xavier(hidden, classes));
    store.register("clf.b2", Array2::zeros((1, classes)));
}

pub fn init_predictor_params(store: &mut ParamStore, in_dim: usize, hidden: usize, seed: u64) {
    let mut rng = rng_from(&[seed, tag::INIT, 22]);
    let mut xavier = |r: usize, c: usize| {
        let bound = (6.0 / (r + c) as f64).sqrt();
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-bound..bound))
    };
    store.register("lp.w1", xavier(2 * in_dim, hidden));
    store.register("lp.b1", Array2::zeros((1, hidden)));
    store.register("lp.w2", xavier(hidden, 1));
    store.register("lp.b2", Array2::zeros((1, 1)));
}

/// Class logits of the two-layer classifier on tangent coordinates of the
/// selected rows.
pub fn classifier_logits(
    t: &mut Tape,
    geo: &Geometry,
    bp: &BoundParams,
    z: NodeId,
    c_l: NodeId,
    rows: &[usize],
) -> NodeId {
    let sel = t.gather_rows(z, Rc::new(rows.to_vec()));
    let x = geo.logmap0(t, sel, c_l);
    let w1 = bp.node("clf.w1");
    let b1 = bp.node("clf.b1");
    let w2 = bp.node("clf.w2");
    let b2 = bp.node("clf.b2");
    let xw = t.matmul(x, w1);
    let pre = t.add(xw, b1);
    let h = t.relu(pre);
    let hw = t.matmul(h, w2);
    t.add(hw, b2)
}

/// Mean negative cross-entropy of class logits against integer labels.
pub fn nc_loss(t: &mut Tape, logits: NodeId, labels: &[usize]) -> NodeId {
    let (n, k) = t.value(logits).dim();
    assert_eq!(labels.len(), n, "one label per logit row");
    let mut onehot = Array2::zeros((n, k));
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < k, "label {l} out of range for {k} classes");
        onehot[(i, l)] = 1.0;
    }
    let y = t.constant(onehot);
    let lse = t.logsumexp_rows(logits);
    let logp = t.sub(logits, lse);
    let picked = t.mul(y, logp);
    let per_row = t.sum_rows(picked);
    let mean = t.mean_all(per_row);
    t.neg(mean)
}

/// Edge scores of the two-layer predictor on concatenated tangent pairs.
pub fn predictor_logits(
    t: &mut Tape,
    geo: &Geometry,
    bp: &BoundParams,
    z: NodeId,
    c_l: NodeId,
    pairs: &[(usize, usize)],
) -> NodeId {
    let (srcs, dsts): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
    let zs = t.gather_rows(z, Rc::new(srcs));
    let zd = t.gather_rows(z, Rc::new(dsts));
    let xs = geo.logmap0(t, zs, c_l);
    let xd = geo.logmap0(t, zd, c_l);
    let x = t.concat_cols(&[xs, xd]);
    let w1 = bp.node("lp.w1");
    let b1 = bp.node("lp.b1");
    let w2 = bp.node("lp.w2");
    let b2 = bp.node("lp.b2");
    let xw = t.matmul(x, w1);
    let pre = t.add(xw, b1);
    let h = t.relu(pre);
    let hw = t.matmul(h, w2);
    t.add(hw, b2)
}

/// `-avg log p` over positives `- avg log(1-p)` over negatives, with
/// `p = sigmoid(logit)` folded into stable softplus forms.
pub fn lp_loss(t: &mut Tape, pos_logits: NodeId, neg_logits: NodeId) -> NodeId {
    let neg_pos = t.neg(pos_logits);
    let lp = t.softplus(neg_pos);
    let ln = t.softplus(neg_logits);
    let a = t.mean_all(lp);
    let b = t.mean_all(ln);
    t.add(a, b)
}

/// Overall objective:
/// `L_dt(Z) + lambda1 (L_dt(Z_st) + L_dt(Z_se)) + lambda2 L_dis + lambda3 L_cl`.
/// Absent components simply drop their term.
pub fn total_loss(
    t: &mut Tape,
    l_dt_fused: NodeId,
    l_dt_st: Option<NodeId>,
    l_dt_se: Option<NodeId>,
    l_dis: Option<NodeId>,
    l_cl: Option<NodeId>,
    w: &LossWeights,
) -> NodeId {
    let mut acc = l_dt_fused;
    if w.lambda1 != 0.0 {
        for part in [l_dt_st, l_dt_se].into_iter().flatten() {
            let scaled = t.affine(part, w.lambda1, 0.0);
            acc = t.add(acc, scaled);
        }
    }
    if w.lambda2 != 0.0 {
        if let Some(l) = l_dis {
            let scaled = t.affine(l, w.lambda2, 0.0);
            acc = t.add(acc, scaled);
        }
    }
    if w.lambda3 != 0.0 {
        if let Some(l) = l_cl {
            let scaled = t.affine(l, w.lambda3, 0.0);
            acc = t.add(acc, scaled);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryKind;
    use ndarray::arr2;

    fn geo() -> Geometry {
        Geometry::new(GeometryKind::Ball)
    }

    #[test]
    fn infonce_single_node_is_zero() {
        let mut t = Tape::new();
        let z = t.constant(arr2(&[[0.4, 0.1]]));
        let zp = t.constant(arr2(&[[0.3, 0.2]]));
        let negs = vec![vec![]];
        let l = infonce_loss(&mut t, z, zp, 0.5, &negs);
        assert!(t.scalar_value(l).abs() < 1e-12);
    }

    #[test]
    fn infonce_orthogonal_pair_value() {
        // z = z' per node, cross-pairs orthogonal, tau = 1:
        // per node -log(e/(e+1)) = ln(1+1/e); doubled over two nodes
        let mut t = Tape::new();
        let z = t.constant(arr2(&[[0.5, 0.0], [0.0, 0.7]]));
        let zp = t.constant(arr2(&[[0.5, 0.0], [0.0, 0.7]]));
        let negs = vec![vec![1], vec![0]];
        let l = infonce_loss(&mut t, z, zp, 1.0, &negs);
        let expect = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!(
            (t.scalar_value(l) - expect).abs() < 1e-9,
            "{}",
            t.scalar_value(l)
        );
        assert!((t.scalar_value(l) - 0.62652).abs() < 1e-5);
    }

    #[test]
    fn infonce_decreases_when_negative_moves_away() {
        let loss_with = |off: f64| -> f64 {
            let mut t = Tape::new();
            let z = t.constant(arr2(&[[0.5, 0.0], [off, 0.6]]));
            let zp = t.constant(arr2(&[[0.5, 0.0], [off, 0.6]]));
            let negs = vec![vec![1], vec![0]];
            let l = infonce_loss(&mut t, z, zp, 0.5, &negs);
            t.scalar_value(l)
        };
        // moving the second node's direction away from the first lowers the
        // cross-pair cosine and the loss
        assert!(loss_with(0.0) < loss_with(0.4));
    }

    #[test]
    fn club_constant_q_cancels_exactly_on_full_population() {
        let mut store = ParamStore::new();
        init_club_params(&mut store, 3, 3, 4, 1);
        // make q ignore its input
        *store.get_mut("q.w1") = Array2::zeros((3, 4));
        let x = arr2(&[[0.1, 0.2, 0.0], [0.0, -0.1, 0.3], [0.2, 0.2, 0.2]]);
        let y = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.5], [0.3, 0.3, 0.3]]);
        let est = club_estimate(&store, &x, &y);
        assert!(est.abs() < 1e-12, "constant q must cancel: {est}");
    }

    #[test]
    fn club_matrix_agrees_with_rowwise_form() {
        let mut store = ParamStore::new();
        init_club_params(&mut store, 3, 2, 5, 2);
        let x = arr2(&[[0.1, 0.4, -0.2], [0.7, 0.0, 0.1], [0.2, -0.3, 0.5]]);
        let y = arr2(&[[0.3, 0.1], [-0.2, 0.4], [0.0, 0.2]]);
        let mut t = Tape::new();
        let q = bind_club(&mut t, &store, false);
        let xn = t.constant(x.clone());
        let yn = t.constant(y.clone());
        let full = club_log_q_matrix(&mut t, &q, xn, yn);
        // diagonal must equal the paired log-likelihood
        let paired = club_log_q(&mut t, &q, xn, yn);
        for i in 0..3 {
            assert!((t.value(full)[(i, i)] - t.value(paired)[(i, 0)]).abs() < 1e-10);
        }
        // off-diagonal: recompute one entry with shuffled pairing
        let y_shift = arr2(&[[-0.2, 0.4], [0.0, 0.2], [0.3, 0.1]]);
        let ys = t.constant(y_shift);
        let shifted = club_log_q(&mut t, &q, xn, ys);
        for i in 0..3 {
            let j = (i + 1) % 3;
            assert!((t.value(full)[(i, j)] - t.value(shifted)[(i, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn q_fit_learns_a_linear_map_better_than_constant() {
        // y = x + noise; after fitting, held-out likelihood must beat the
        // best constant predictor
        let mut rng = rng_from(&[9, 9]);
        let n = 400;
        let d = 3;
        let mut x = Array2::zeros((n, d));
        let mut y = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                let v: f64 = rng.gen_range(-1.0..1.0);
                x[(i, j)] = v;
                y[(i, j)] = v + 0.05 * rng.gen_range(-1.0..1.0);
            }
        }
        let x_tr = x.slice(ndarray::s![..300, ..]).to_owned();
        let x_ho = x.slice(ndarray::s![300.., ..]).to_owned();
        let y_tr = y.slice(ndarray::s![..300, ..]).to_owned();
        let y_ho = y.slice(ndarray::s![300.., ..]).to_owned();

        let mut store = ParamStore::new();
        init_club_params(&mut store, d, d, 16, 4);
        let adam = AdamConfig::default();
        for _ in 0..500 {
            q_fit_step(&mut store, &x_tr, &y_tr, &adam);
        }
        let ll = {
            let mut t = Tape::new();
            let q = bind_club(&mut t, &store, false);
            let xn = t.constant(x_ho.clone());
            let yn = t.constant(y_ho.clone());
            let l = club_log_q(&mut t, &q, xn, yn);
            let m = t.mean_all(l);
            t.scalar_value(m)
        };
        // constant-predictor baseline: diagonal Gaussian at the sample
        // mean/variance of y
        let mean = y_ho.sum_axis(ndarray::Axis(0)) / 100.0;
        let mut var = ndarray::Array1::zeros(d);
        for row in y_ho.outer_iter() {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2) / 100.0;
            }
        }
        let baseline: f64 = -0.5
            * var
                .iter()
                .map(|&v: &f64| 1.0 + v.max(1e-12).ln() + LN_2PI)
                .sum::<f64>();
        assert!(
            ll > baseline + 0.5,
            "fit {ll} should beat constant baseline {baseline}"
        );
    }

    #[test]
    fn q_fit_leaves_inputs_without_gradient() {
        let mut t = Tape::new();
        let mut store = ParamStore::new();
        init_club_params(&mut store, 2, 2, 4, 3);
        let q = bind_club(&mut t, &store, true);
        let x = t.constant(arr2(&[[0.1, 0.2]]));
        let y = t.constant(arr2(&[[0.3, 0.4]]));
        let ll = club_log_q(&mut t, &q, x, y);
        let m = t.mean_all(ll);
        let grads = t.backward(m);
        assert!(grads.get(x).is_none(), "detached embeddings carry no grad");
        assert!(grads.get(q.w1).is_some(), "q parameters do");
    }

    #[test]
    fn logvar_stays_clamped() {
        let mut store = ParamStore::new();
        init_club_params(&mut store, 2, 2, 4, 5);
        *store.get_mut("q.b_lv") = Array2::from_elem((1, 2), 100.0);
        *store.get_mut("q.w1") = Array2::zeros((2, 4));
        let mut t = Tape::new();
        let q = bind_club(&mut t, &store, false);
        let x = t.constant(arr2(&[[0.5, -0.5]]));
        let y = t.constant(arr2(&[[0.0, 0.0]]));
        let ll = club_log_q(&mut t, &q, x, y);
        // with lv clamped at 10: -0.5 * sum(lv + ln2pi) dominates
        let v = t.value(ll)[(0, 0)];
        assert!(v >= -0.5 * (2.0 * (10.0 + LN_2PI)) - 1e-9);
    }

    #[test]
    fn uninformative_discriminator_gives_ln2() {
        let mut store = ParamStore::new();
        init_discriminator_params(&mut store, 2, 4, 1);
        *store.get_mut("disc.w2") = Array2::zeros((4, 1));
        let g = geo();
        let mut t = Tape::new();
        let bp = BoundParams::bind(&mut t, &store);
        let d = bind_discriminator(&bp);
        let c = t.scalar(1.0);
        let z_st = t.constant(arr2(&[[0.1, 0.0], [0.0, 0.2]]));
        let z_he = t.constant(arr2(&[[0.0, 0.3], [0.2, 0.1]]));
        let l = discriminator_loss(&mut t, &g, &d, z_st, z_he, c, DifferenceMode::Cooperative);
        assert!((t.scalar_value(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn separated_embeddings_with_sharp_discriminator_drive_bce_to_zero() {
        let mut store = ParamStore::new();
        init_discriminator_params(&mut store, 2, 2, 1);
        // Möbius layer ~ identity, head reads the (large) first tangent coord
        *store.get_mut("disc.w1") = Array2::eye(2);
        *store.get_mut("disc.b1") = Array2::zeros((1, 2));
        *store.get_mut("disc.w2") = arr2(&[[-60.0], [0.0]]);
        *store.get_mut("disc.b2") = arr2(&[[30.0]]);
        let g = geo();
        let mut t = Tape::new();
        let bp = BoundParams::bind(&mut t, &store);
        let d = bind_discriminator(&bp);
        let c = t.scalar(1.0);
        // structural far along +x, typed at the origin
        let z_st = t.constant(arr2(&[[0.9, 0.0]]));
        let z_he = t.constant(arr2(&[[0.0, 0.0]]));
        let l = discriminator_loss(&mut t, &g, &d, z_st, z_he, c, DifferenceMode::Cooperative);
        assert!(t.scalar_value(l) < 1e-5, "got {}", t.scalar_value(l));
    }

    #[test]
    fn discriminator_swap_symmetry_under_logit_flip() {
        let mut store = ParamStore::new();
        init_discriminator_params(&mut store, 2, 4, 9);
        let g = geo();
        let z_a = arr2(&[[0.3, 0.1], [0.2, -0.2]]);
        let z_b = arr2(&[[-0.1, 0.4], [0.0, 0.25]]);

        let run = |store: &ParamStore, first: &Array2<f64>, second: &Array2<f64>| -> f64 {
            let mut t = Tape::new();
            let bp = BoundParams::bind(&mut t, store);
            let d = bind_discriminator(&bp);
            let c = t.scalar(1.0);
            let a = t.constant(first.clone());
            let b = t.constant(second.clone());
            let l = discriminator_loss(&mut t, &g, &d, a, b, c, DifferenceMode::Cooperative);
            t.scalar_value(l)
        };
        let original = run(&store, &z_a, &z_b);
        // flip the scalar head so logits negate, then swap the matrices
        {
            let w2 = store.get_mut("disc.w2");
            *w2 = w2.mapv(|v| -v);
        }
        {
            let b2 = store.get_mut("disc.b2");
            *b2 = b2.mapv(|v| -v);
        }
        let swapped = run(&store, &z_b, &z_a);
        assert!((original - swapped).abs() < 1e-12);
    }

    #[test]
    fn adversarial_mode_reverses_encoder_gradient() {
        let mut store = ParamStore::new();
        init_discriminator_params(&mut store, 2, 4, 11);
        let g = geo();
        let grad_for = |mode: DifferenceMode| -> Array2<f64> {
            let mut t = Tape::new();
            let bp = BoundParams::bind(&mut t, &store);
            let d = bind_discriminator(&bp);
            let c = t.scalar(1.0);
            let z_st = t.leaf(arr2(&[[0.3, 0.1]]));
            let z_he = t.constant(arr2(&[[-0.1, 0.2]]));
            let l = discriminator_loss(&mut t, &g, &d, z_st, z_he, c, mode);
            let grads = t.backward(l);
            grads.get(z_st).unwrap().clone()
        };
        let coop = grad_for(DifferenceMode::Cooperative);
        let adv = grad_for(DifferenceMode::Adversarial);
        for (a, b) in coop.iter().zip(adv.iter()) {
            assert!((a + b).abs() < 1e-12, "adversarial grad must be negated");
        }
    }

    #[test]
    fn disentangle_loss_composition() {
        let mut t = Tape::new();
        let mi = t.constant(arr2(&[[0.2]]));
        let df = t.constant(arr2(&[[0.6]]));
        let l = disentangle_loss(&mut t, mi, df, 0.5);
        assert!((t.scalar_value(l) - 0.5).abs() < 1e-12);
        let l0 = disentangle_loss(&mut t, mi, df, 0.0);
        assert!((t.scalar_value(l0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn fuse_identity_and_ball_closure() {
        let g = geo();
        let mut t = Tape::new();
        let c = t.scalar(1.0);
        let z_st = t.constant(arr2(&[[0.5, 0.2], [0.9, 0.0]]));
        let origin = t.constant(Array2::zeros((2, 2)));
        let same = fuse(&mut t, &g, z_st, origin, c);
        for (a, b) in t.value(same).iter().zip(t.value(z_st).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let z_se = t.constant(arr2(&[[0.4, -0.3], [0.0, 0.8]]));
        let fused = fuse(&mut t, &g, z_st, z_se, c);
        for row in t.value(fused).outer_iter() {
            assert!(row.dot(&row) < 1.0);
        }
    }

    #[test]
    fn nc_loss_limits() {
        let mut t = Tape::new();
        // near-one-hot predictions -> ~0
        let sharp = t.constant(arr2(&[[40.0, 0.0, 0.0], [0.0, 40.0, 0.0]]));
        let l = nc_loss(&mut t, sharp, &[0, 1]);
        assert!(t.scalar_value(l) < 1e-9);
        // uniform predictions over K classes -> ln K
        let flat = t.constant(Array2::zeros((2, 3)));
        let l = nc_loss(&mut t, flat, &[2, 0]);
        assert!((t.scalar_value(l) - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lp_loss_limits_and_permutation_invariance() {
        let mut t = Tape::new();
        let zeros = t.constant(Array2::zeros((4, 1)));
        let l = lp_loss(&mut t, zeros, zeros);
        assert!((t.scalar_value(l) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let sharp_pos = t.constant(Array2::from_elem((3, 1), 50.0));
        let sharp_neg = t.constant(Array2::from_elem((3, 1), -50.0));
        let l = lp_loss(&mut t, sharp_pos, sharp_neg);
        assert!(t.scalar_value(l) < 1e-9);

        let a = t.constant(arr2(&[[0.3], [-0.7], [1.2]]));
        let b = t.constant(arr2(&[[1.2], [0.3], [-0.7]]));
        let n = t.constant(arr2(&[[0.1], [0.0], [-0.4]]));
        let l1 = lp_loss(&mut t, a, n);
        let l2 = lp_loss(&mut t, b, n);
        assert!((t.scalar_value(l1) - t.scalar_value(l2)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weights() {
        let w = LossWeights::default();
        let mut t = Tape::new();
        let dt = t.constant(arr2(&[[1.0]]));
        let dst = t.constant(arr2(&[[2.0]]));
        let dse = t.constant(arr2(&[[3.0]]));
        let dis = t.constant(arr2(&[[4.0]]));
        let cl = t.constant(arr2(&[[5.0]]));
        let l = total_loss(&mut t, dt, Some(dst), Some(dse), Some(dis), Some(cl), &w);
        let expect = 1.0 + 0.2 * (2.0 + 3.0) + 0.5 * 4.0 + 0.05 * 5.0;
        assert!((t.scalar_value(l) - expect).abs() < 1e-12);

        let zeroed = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..w
        };
        let l0 = total_loss(&mut t, dt, Some(dst), Some(dse), Some(dis), Some(cl), &zeroed);
        assert!((t.scalar_value(l0) - 1.0).abs() < 1e-12);
    }
}
