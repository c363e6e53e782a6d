//! Negative-edge sampling for link prediction.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::Rng;

use crate::hetgraph::HetGraph;
use crate::rng::{rng_from, tag};

/// For each positive `(relation, i, j)` draw `k` corruptions `(relation, i, j')`
/// with `j'` uniform over the relation's destination type such that `(i, j')`
/// is not an edge of that relation in `reference`. Positives whose destination
/// type is exhausted (every candidate is a true edge) are skipped with a
/// warning.
pub fn sample_negative_edges(
    reference: &HetGraph,
    positives: &[(usize, usize, usize)],
    k: usize,
    seed: u64,
) -> Vec<(usize, usize, usize)> {
    assert!(k >= 1, "negative sampling needs k >= 1");
    let mut membership: BTreeMap<usize, BTreeSet<(usize, usize)>> = BTreeMap::new();
    for &(ri, _, _) in positives {
        membership.entry(ri).or_insert_with(|| {
            reference.relations()[ri].edges.iter().cloned().collect()
        });
    }
    let mut rng = rng_from(&[seed, tag::NEG_SAMPLE]);
    let mut out = Vec::with_capacity(positives.len() * k);
    for &(ri, src, _) in positives {
        let dst_range = reference.type_range(reference.relations()[ri].dst_ty);
        let present = &membership[&ri];
        for _ in 0..k {
            let mut found = None;
            for _ in 0..20 {
                let cand = rng.gen_range(dst_range.clone());
                if cand != src && !present.contains(&(src, cand)) {
                    found = Some(cand);
                    break;
                }
            }
            if found.is_none() {
                // saturated neighbourhood: enumerate the complement
                let complement: Vec<usize> = dst_range
                    .clone()
                    .filter(|&cand| cand != src && !present.contains(&(src, cand)))
                    .collect();
                if complement.is_empty() {
                    warn!("no negative destination available for node {src} in relation {ri}");
                    break;
                }
                found = Some(complement[rng.gen_range(0..complement.len())]);
            }
            out.push((ri, src, found.unwrap()));
        }
    }
    out
}
