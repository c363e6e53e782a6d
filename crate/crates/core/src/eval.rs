//! Metrics and analysis harnesses: F1 / AUC / AP, the mutual-information
//! probe over trained embeddings, and robustness sweeps that retrain under
//! controlled corruption of the training data.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::autodiff::{AdamConfig, ParamStore};
use crate::error::{CoreError, Result};
use crate::hetgraph::sample::sample_negative_edges;
use crate::hetgraph::split::make_splits;
use crate::hetgraph::HetGraph;
use crate::manifold::artanh;
use crate::objectives::{self};
use crate::rng::{mix, rng_from, tag};
use crate::trainer::{
    self, task_data, Checkpoint, PerturbKind, TaskData, TrainConfig, TrainPerturbation,
};

// ---------------------------------------------------------------------------
// basic metrics
// ---------------------------------------------------------------------------

/// Macro and micro F1. Macro averages over the classes present in the truth
/// or the predictions; micro counts globally (equal to accuracy for
/// single-label prediction).
pub fn f1_scores(predictions: &[usize], labels: &[usize]) -> (f64, f64) {
    assert_eq!(predictions.len(), labels.len());
    assert!(!labels.is_empty(), "f1 on empty input");
    let k = predictions
        .iter()
        .chain(labels)
        .cloned()
        .max()
        .unwrap_or(0)
        + 1;
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fneg = vec![0usize; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    let mut macro_sum = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        if tp[c] + fp[c] + fneg[c] == 0 {
            continue; // class absent from truth and predictions
        }
        present += 1;
        let denom = 2 * tp[c] + fp[c] + fneg[c];
        if denom > 0 {
            macro_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    let macro_f1 = macro_sum / present.max(1) as f64;
    let total_tp: usize = tp.iter().sum();
    let micro = total_tp as f64 / labels.len() as f64;
    (macro_f1, micro)
}

/// AUC by the rank statistic with tie-averaged ranks, and AP by
/// precision-recall step integration over descending scores.
pub fn auc_ap(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    assert!(n_pos > 0 && n_neg > 0, "both classes required");

    // tie-averaged ranks, ascending scores
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &ix in &order[i..=j] {
            ranks[ix] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let auc =
        (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);

    // AP: sum over descending-score positives of precision at each recall step
    let mut desc: Vec<usize> = (0..scores.len()).collect();
    desc.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut seen_pos = 0usize;
    let mut ap = 0.0;
    for (k, &ix) in desc.iter().enumerate() {
        if labels[ix] {
            seen_pos += 1;
            ap += seen_pos as f64 / (k + 1) as f64;
        }
    }
    let ap = ap / n_pos as f64;
    (auc, ap)
}

// ---------------------------------------------------------------------------
// checkpoint evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub source: String,
    pub primary_mean: f64,
    pub primary_std: f64,
    pub secondary_mean: f64,
    pub secondary_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub task: String,
    pub metric_names: (String, String),
    pub repeats: usize,
    pub rows: Vec<ReportRow>,
}

impl MetricReport {
    /// Aligned-column plain text, one row per embedding source.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        let (m1, m2) = &self.metric_names;
        out.push_str(&format!(
            "{:<14} {:>18} {:>18}\n",
            "source",
            format!("{m1} (mean±std)"),
            format!("{m2} (mean±std)")
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>10.2} ±{:>5.2} {:>10.2} ±{:>5.2}\n",
                r.source,
                100.0 * r.primary_mean,
                100.0 * r.primary_std,
                100.0 * r.secondary_mean,
                100.0 * r.secondary_std,
            ));
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluate a trained checkpoint on the held-out part (`test = false` for
/// validation). Scores are reported for the fused embedding and, when the
/// variant provides them, the structural and semantic matrices. Repeats
/// resample evaluation negatives (link prediction); classification is
/// deterministic, so its std is zero.
pub fn evaluate_checkpoint(
    g: &HetGraph,
    ckpt: &Checkpoint,
    repeats: usize,
    seed: u64,
    test: bool,
) -> Result<MetricReport> {
    let cfg = &ckpt.cfg;
    let splits = make_splits(g, cfg.split_ratios, cfg.seed)?;
    let g_msg = trainer::message_graph(g, cfg, &splits)?;
    let data = task_data(g, &g_msg, cfg, &splits)?;
    let emb = trainer::infer_embeddings_on(ckpt, &g_msg)?;

    let sources: Vec<(String, &Array2<f64>)> = {
        let mut v: Vec<(String, &Array2<f64>)> = vec![("fused".into(), &emb.fused)];
        if let Some(st) = &emb.structural {
            v.push(("structural".into(), st));
        }
        if let Some(se) = &emb.semantic {
            v.push(("semantic".into(), se));
        }
        v
    };

    let repeats = repeats.max(1);
    let mut rows = Vec::new();
    match &data {
        TaskData::Nc { val, test: te, .. } => {
            let part = if test { te } else { val };
            let nodes: Vec<usize> = part.iter().map(|&(n, _)| n).collect();
            let labels: Vec<usize> = part.iter().map(|&(_, l)| l).collect();
            for (name, z) in sources {
                let preds = trainer::classify_rows(ckpt, z, emb.curvature, &nodes);
                let (macro_f1, micro_f1) = f1_scores(&preds, &labels);
                rows.push(ReportRow {
                    source: name,
                    primary_mean: macro_f1,
                    primary_std: 0.0,
                    secondary_mean: micro_f1,
                    secondary_std: 0.0,
                });
            }
            Ok(MetricReport {
                task: "node_classification".into(),
                metric_names: ("Macro-F1".into(), "Micro-F1".into()),
                repeats,
                rows,
            })
        }
        TaskData::Lp {
            val_pos,
            test_pos,
            ..
        } => {
            // clean-graph positives for this part; negatives resampled per
            // repeat against the full clean edge set
            let pos = if test { test_pos } else { val_pos };
            let map = trainer::index_map(g, &g_msg);
            let inverse: std::collections::BTreeMap<usize, usize> =
                map.iter().enumerate().map(|(c, &m)| (m, c)).collect();
            let pos_clean: Vec<(usize, usize, usize)> = pos
                .iter()
                .map(|&(ri, s, d)| (ri, inverse[&s], inverse[&d]))
                .collect();
            for (name, z) in sources {
                let mut aucs = Vec::with_capacity(repeats);
                let mut aps = Vec::with_capacity(repeats);
                for rep in 0..repeats {
                    let neg_clean = sample_negative_edges(
                        g,
                        &pos_clean,
                        1,
                        mix(&[seed, tag::EVAL, rep as u64, if test { 1 } else { 0 }]),
                    );
                    let pairs: Vec<(usize, usize)> = pos
                        .iter()
                        .map(|&(_, s, d)| (s, d))
                        .chain(neg_clean.iter().map(|&(_, s, d)| (map[s], map[d])))
                        .collect();
                    let scores = trainer::score_pairs(ckpt, z, emb.curvature, &pairs);
                    let labels: Vec<bool> = (0..pos.len())
                        .map(|_| true)
                        .chain((0..neg_clean.len()).map(|_| false))
                        .collect();
                    let (auc, ap) = auc_ap(&scores, &labels);
                    aucs.push(auc);
                    aps.push(ap);
                }
                let (am, asd) = mean_std(&aucs);
                let (pm, psd) = mean_std(&aps);
                rows.push(ReportRow {
                    source: name,
                    primary_mean: am,
                    primary_std: asd,
                    secondary_mean: pm,
                    secondary_std: psd,
                });
            }
            Ok(MetricReport {
                task: "link_prediction".into(),
                metric_names: ("AUC".into(), "AP".into()),
                repeats,
                rows,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// mutual-information probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MiProbe {
    pub estimate: f64,
    pub bootstrap_std: f64,
    pub resamples: Vec<f64>,
    pub fit_steps: usize,
}

/// Tangent coordinates of ball rows at the given curvature.
pub fn tangent_rows(z: &Array2<f64>, curvature: f64) -> Array2<f64> {
    let sqrt_c = curvature.sqrt();
    let mut out = z.clone();
    for mut row in out.outer_iter_mut() {
        let n = row.dot(&row).sqrt();
        if n < 1e-15 {
            continue;
        }
        let scale = artanh(sqrt_c * n) / (sqrt_c * n);
        row.mapv_inplace(|v| v * scale);
    }
    out
}

fn gather(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&m.row(r));
    }
    out
}

/// Freshly fit a conditional network on a held-out split of the rows, then
/// report the full-set CLUB estimate with a bootstrap std over 5 resamples.
pub fn mi_probe(x_tan: &Array2<f64>, y_tan: &Array2<f64>, seed: u64) -> MiProbe {
    assert_eq!(x_tan.nrows(), y_tan.nrows());
    let n = x_tan.nrows();
    let mut rng = rng_from(&[seed, tag::PROBE]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let holdout = (n / 5).max(1);
    let (fit_rows, ho_rows) = order.split_at(n - holdout);
    let x_fit = gather(x_tan, fit_rows);
    let y_fit = gather(y_tan, fit_rows);
    let x_ho = gather(x_tan, ho_rows);
    let y_ho = gather(y_tan, ho_rows);

    let mut store = ParamStore::new();
    // small conditional and gentle steps: enough for a linear-Gaussian
    // relationship, little room to memorize the fit rows
    objectives::init_club_params(&mut store, x_tan.ncols(), y_tan.ncols(), 16, seed);
    let adam = AdamConfig {
        lr: 0.005,
        ..Default::default()
    };
    // fit to convergence on held-out likelihood
    let mut best_ll = f64::NEG_INFINITY;
    let mut best = store.clone();
    let mut stale = 0usize;
    let mut steps = 0usize;
    for step in 0..2000 {
        objectives::q_fit_step(&mut store, &x_fit, &y_fit, &adam);
        steps = step + 1;
        if step % 20 == 19 {
            let ll = holdout_ll(&store, &x_ho, &y_ho);
            if ll > best_ll + 1e-6 {
                best_ll = ll;
                best = store.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= 5 {
                    break;
                }
            }
        }
    }
    let store = best;

    let estimate = objectives::club_estimate(&store, x_tan, y_tan);
    let mut resamples = Vec::with_capacity(5);
    for b in 0..5 {
        let mut idx = Vec::with_capacity(n);
        let mut brng = rng_from(&[seed, tag::PROBE, 1 + b as u64]);
        for _ in 0..n {
            idx.push(brng.gen_range(0..n));
        }
        let xb = gather(x_tan, &idx);
        let yb = gather(y_tan, &idx);
        resamples.push(objectives::club_estimate(&store, &xb, &yb));
    }
    let (_, std) = mean_std(&resamples);
    MiProbe {
        estimate,
        bootstrap_std: std,
        resamples,
        fit_steps: steps,
    }
}

fn holdout_ll(store: &ParamStore, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let mut t = crate::autodiff::Tape::new();
    let q = objectives::bind_club(&mut t, store, false);
    let xn = t.constant(x.clone());
    let yn = t.constant(y.clone());
    let ll = objectives::club_log_q(&mut t, &q, xn, yn);
    let m = t.mean_all(ll);
    t.scalar_value(m)
}

/// Probe a trained checkpoint: fresh CLUB fit over the structural and
/// semantic tangent embeddings.
pub fn mi_probe_checkpoint(g: &HetGraph, ckpt: &Checkpoint, seed: u64) -> Result<MiProbe> {
    let emb = trainer::infer_embeddings(ckpt, g)?;
    let st = emb
        .structural
        .as_ref()
        .ok_or_else(|| CoreError::Config("probe needs a structural embedding".into()))?;
    let se = emb
        .semantic
        .as_ref()
        .ok_or_else(|| CoreError::Config("probe needs a semantic embedding".into()))?;
    let x = tangent_rows(st, emb.curvature);
    let y = tangent_rows(se, emb.curvature);
    Ok(mi_probe(&x, &y, seed))
}

// ---------------------------------------------------------------------------
// robustness sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Structural,
    /// Edge-type reassignment (node-type reassignment is available through
    /// [`PerturbKind::NodeTypes`] directly).
    Semantic,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub report: MetricReport,
}

/// Retrain under training-data corruption at each ratio and evaluate on the
/// clean test split. `repeats` runs use seeds `seed..seed+repeats`, reported
/// as mean ± std per embedding source.
pub fn robustness_sweep(
    g: &HetGraph,
    base_cfg: &TrainConfig,
    kind: SweepKind,
    ratios: &[f64],
    repeats: usize,
) -> Result<Vec<SweepPoint>> {
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(CoreError::Config("sweep ratio outside [0,1]".into()));
    }
    let perturb_kind = match kind {
        SweepKind::Structural => PerturbKind::Structural,
        SweepKind::Semantic => PerturbKind::EdgeTypes,
    };
    let mut out = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        // per-source score collections across repeats
        let mut per_source: std::collections::BTreeMap<String, (Vec<f64>, Vec<f64>)> =
            Default::default();
        let mut metric_names = ("".to_string(), "".to_string());
        let mut task_name = String::new();
        for rep in 0..repeats.max(1) {
            let mut cfg = base_cfg.clone();
            cfg.seed = base_cfg.seed + rep as u64;
            cfg.train_perturbation = (ratio > 0.0).then_some(TrainPerturbation {
                kind: perturb_kind,
                ratio,
            });
            let outcome = trainer::train(g, &cfg)?;
            let report = evaluate_checkpoint(g, &outcome.checkpoint, 1, cfg.seed, true)?;
            metric_names = report.metric_names.clone();
            task_name = report.task.clone();
            for row in report.rows {
                let slot = per_source.entry(row.source).or_default();
                slot.0.push(row.primary_mean);
                slot.1.push(row.secondary_mean);
            }
        }
        let rows = per_source
            .into_iter()
            .map(|(source, (prim, sec))| {
                let (pm, ps) = mean_std(&prim);
                let (sm, ss) = mean_std(&sec);
                ReportRow {
                    source,
                    primary_mean: pm,
                    primary_std: ps,
                    secondary_mean: sm,
                    secondary_std: ss,
                }
            })
            .collect();
        out.push(SweepPoint {
            ratio,
            report: MetricReport {
                task: task_name,
                metric_names,
                repeats: repeats.max(1),
                rows,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_perfect_and_degenerate() {
        assert_eq!(f1_scores(&[0, 1, 2], &[0, 1, 2]), (1.0, 1.0));
        // single-class truth with matching predictions
        assert_eq!(f1_scores(&[1, 1, 1], &[1, 1, 1]), (1.0, 1.0));
    }

    #[test]
    fn f1_binary_hand_counts() {
        // all predicted positive, half truly positive:
        // class1: tp=2 fp=2 fn=0 -> f1 = 2/3; class0: tp=0 fp=0 fn=2 -> 0
        let preds = vec![1, 1, 1, 1];
        let labels = vec![1, 1, 0, 0];
        let (macro_f1, micro) = f1_scores(&preds, &labels);
        assert!((macro_f1 - (2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((micro - 0.5).abs() < 1e-12);
    }

    #[test]
    fn f1_invariant_under_class_relabeling() {
        let preds = vec![0, 1, 2, 1, 0, 2, 2];
        let labels = vec![0, 1, 1, 1, 2, 2, 0];
        let relabel = |v: &[usize]| -> Vec<usize> { v.iter().map(|&c| (c + 1) % 3).collect() };
        let a = f1_scores(&preds, &labels);
        let b = f1_scores(&relabel(&preds), &relabel(&labels));
        assert!((a.0 - b.0).abs() < 1e-12);
        assert!((a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn auc_perfect_reversed_and_paircount_oracle() {
        let (auc, ap) = auc_ap(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!((auc, ap), (1.0, 1.0));
        let (auc, _) = auc_ap(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]);
        assert_eq!(auc, 0.0);

        // 6-point toy set against the exhaustive concordant-pair fraction
        let scores = [0.1, 0.4, 0.35, 0.8, 0.65, 0.35];
        let labels = [false, true, false, true, false, true];
        let (auc, _) = auc_ap(&scores, &labels);
        let mut concordant = 0.0;
        let mut total = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if labels[i] && !labels[j] {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        concordant += 1.0;
                    } else if scores[i] == scores[j] {
                        concordant += 0.5;
                    }
                }
            }
        }
        assert!((auc - concordant / total).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pair_counting_on_random_inputs() {
        let mut rng = rng_from(&[3, 14]);
        for _ in 0..20 {
            let n = 30;
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..10) as f64) / 10.0).collect();
            let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let (auc, _) = auc_ap(&scores, &labels);
            let mut conc = 0.0;
            let mut tot = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] && !labels[j] {
                        tot += 1.0;
                        if scores[i] > scores[j] {
                            conc += 1.0;
                        } else if scores[i] == scores[j] {
                            conc += 0.5;
                        }
                    }
                }
            }
            assert!((auc - conc / tot).abs() < 1e-12);
        }
    }

    #[test]
    fn probe_separates_independent_from_copied() {
        // independent random tangent vectors ~ 0; a copy has clearly more MI
        let mut rng = rng_from(&[42, 42]);
        let n = 2000;
        let d = 4;
        let mut x = Array2::zeros((n, d));
        let mut y = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] = rng.gen_range(-0.5..0.5);
                y[(i, j)] = rng.gen_range(-0.5..0.5);
            }
        }
        let independent = mi_probe(&x, &y, 7);
        assert!(
            independent.estimate.abs() < 0.05,
            "independent pairs: {}",
            independent.estimate
        );
        let copied = mi_probe(&x, &x.clone(), 7);
        assert!(
            copied.estimate > independent.estimate + 0.5,
            "copy {} vs independent {}",
            copied.estimate,
            independent.estimate
        );
    }

    #[test]
    fn probe_is_rotation_invariant_within_tolerance() {
        let mut rng = rng_from(&[5, 5]);
        let n = 300;
        // y correlated with x
        let mut x = Array2::zeros((n, 2));
        let mut y = Array2::zeros((n, 2));
        for i in 0..n {
            for j in 0..2 {
                let v: f64 = rng.gen_range(-0.5..0.5);
                x[(i, j)] = v;
                y[(i, j)] = 0.8 * v + 0.2 * rng.gen_range(-0.5..0.5);
            }
        }
        let base = mi_probe(&x, &y, 11);
        // common rotation of both tangent spaces
        let theta = 0.7f64;
        let rot = ndarray::arr2(&[[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]);
        let xr = x.dot(&rot);
        let yr = y.dot(&rot);
        let rotated = mi_probe(&xr, &yr, 11);
        let tol = 3.0 * base.bootstrap_std.max(rotated.bootstrap_std).max(0.05);
        assert!(
            (base.estimate - rotated.estimate).abs() <= tol,
            "{} vs {} (tol {tol})",
            base.estimate,
            rotated.estimate
        );
    }
}
