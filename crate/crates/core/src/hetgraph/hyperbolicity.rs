//! Gromov hyperbolicity via the four-point condition.
//!
//! For a quadruple `(a,b,c,d)` with the three pair sums
//! `S1 = d(a,b)+d(c,d)`, `S2 = d(a,c)+d(b,d)`, `S3 = d(a,d)+d(b,c)`,
//! the defect is `(M1 - M2)/2` where `M1 >= M2` are the two largest sums.
//! The graph's delta is the maximum defect; trees give exactly 0.
//!
//! Distances are BFS hop counts on the largest connected component of the
//! collapsed graph. Exhaustive enumeration is used when the requested sample
//! covers all quadruples; otherwise quadruples are sampled from a bounded
//! node pool so the distance cache stays small.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::hetgraph::HetGraph;
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicityEstimate {
    pub delta: f64,
    pub quadruples: u64,
    pub exact: bool,
    pub component_size: usize,
}

const MAX_POOL: usize = 512;

fn bfs(adj: &[Vec<usize>], start: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    dist[start] = 0;
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == u32::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn largest_component(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut best: Vec<usize> = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut head = 0;
        while head < comp.len() {
            let u = comp[head];
            head += 1;
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

fn four_point_defect(d: [u32; 6]) -> f64 {
    // pairs: (ab,cd), (ac,bd), (ad,bc)
    let s1 = d[0] + d[5];
    let s2 = d[1] + d[4];
    let s3 = d[2] + d[3];
    let mut sums = [s1, s2, s3];
    sums.sort_unstable();
    (sums[2] - sums[1]) as f64 / 2.0
}

fn n_choose_4(n: u64) -> u128 {
    if n < 4 {
        return 0;
    }
    let n = n as u128;
    n * (n - 1) * (n - 2) * (n - 3) / 24
}

/// Estimate delta. `samples = None` forces exhaustive enumeration; a sample
/// budget covering all quadruples of the component is upgraded to exhaustive.
pub fn gromov_hyperbolicity(
    g: &HetGraph,
    samples: Option<u64>,
    seed: u64,
) -> Result<HyperbolicityEstimate> {
    let collapsed = g.collapse_to_homogeneous();
    let adj = collapsed.neighbors(false);
    let comp = largest_component(&adj);
    let m = comp.len();
    if m < 4 {
        return Err(CoreError::GraphData(format!(
            "hyperbolicity needs >= 4 connected nodes, largest component has {m}"
        )));
    }
    let all = n_choose_4(m as u64);
    let exhaustive = match samples {
        None => true,
        Some(s) => (s as u128) >= all,
    };

    if exhaustive {
        // full APSP on the component
        let rows: Vec<Vec<u32>> = comp.iter().map(|&s| bfs(&adj, s)).collect();
        let didx = |a: usize, b: usize| rows[a][comp[b]];
        let mut delta = 0.0f64;
        for a in 0..m {
            for b in (a + 1)..m {
                let dab = didx(a, b);
                for c in (b + 1)..m {
                    let dac = didx(a, c);
                    let dbc = didx(b, c);
                    for e in (c + 1)..m {
                        let d6 = [dab, dac, didx(a, e), dbc, didx(b, e), didx(c, e)];
                        let def = four_point_defect(d6);
                        if def > delta {
                            delta = def;
                        }
                    }
                }
            }
        }
        return Ok(HyperbolicityEstimate {
            delta,
            quadruples: all.min(u64::MAX as u128) as u64,
            exact: true,
            component_size: m,
        });
    }

    let samples = samples.unwrap();
    let mut rng = rng_from(&[seed, tag::HYPERBOLICITY]);
    // bounded node pool keeps the BFS cache small on big graphs
    let pool: Vec<usize> = if m <= MAX_POOL {
        comp.clone()
    } else {
        let mut c = comp.clone();
        c.shuffle(&mut rng);
        c.truncate(MAX_POOL);
        c.sort_unstable();
        c
    };
    let rows: Vec<Vec<u32>> = pool.iter().map(|&s| bfs(&adj, s)).collect();
    let p = pool.len();
    let mut delta = 0.0f64;
    let mut count = 0u64;
    while count < samples {
        let mut pick = [0usize; 4];
        // rejection-sample four distinct pool indices
        pick[0] = rng.gen_range(0..p);
        pick[1] = rng.gen_range(0..p);
        pick[2] = rng.gen_range(0..p);
        pick[3] = rng.gen_range(0..p);
        if pick[0] == pick[1]
            || pick[0] == pick[2]
            || pick[0] == pick[3]
            || pick[1] == pick[2]
            || pick[1] == pick[3]
            || pick[2] == pick[3]
        {
            continue;
        }
        let d6 = [
            rows[pick[0]][pool[pick[1]]],
            rows[pick[0]][pool[pick[2]]],
            rows[pick[0]][pool[pick[3]]],
            rows[pick[1]][pool[pick[2]]],
            rows[pick[1]][pool[pick[3]]],
            rows[pick[2]][pool[pick[3]]],
        ];
        let def = four_point_defect(d6);
        if def > delta {
            delta = def;
        }
        count += 1;
    }
    Ok(HyperbolicityEstimate {
        delta,
        quadruples: count,
        exact: false,
        component_size: m,
    })
}
