use serde::{Deserialize, Serialize};

use super::matrix::FoolingMatrix;
use crate::error::{Error, Result};

/// Mutually-fooling groups found in a square sequential matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub threshold: f64,
    /// Node labels, taken from the matrix columns.
    pub ids: Vec<String>,
    /// Raw `entry <= threshold` matrix before symmetrization.
    pub fooled: Vec<Vec<bool>>,
    /// Symmetrized relation; the diagonal marks nodes fooled by themselves.
    pub relation: Vec<Vec<bool>>,
    /// Clusters as sorted node indices, in extraction order.
    pub clusters: Vec<Vec<usize>>,
    pub unclustered: Vec<usize>,
}

impl ClusterReport {
    pub fn cluster_ids(&self) -> Vec<Vec<String>> {
        self.clusters
            .iter()
            .map(|c| c.iter().map(|&i| self.ids[i].clone()).collect())
            .collect()
    }
}

/// `i ~ j` when the average of `m[i][j]` and `m[j][i]` is at most the
/// threshold. On the diagonal this is just `m[i][i] <= threshold`.
pub fn fooling_relation(m: &FoolingMatrix) -> Result<Vec<Vec<bool>>> {
    if !m.is_square() {
        return Err(Error::arg(format!(
            "cluster extraction needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| (m.get(i, j) + m.get(j, i)) / 2.0 <= m.fooled_threshold)
                .collect()
        })
        .collect())
}

fn bron_kerbosch(
    adj: &[Vec<bool>],
    r: &mut Vec<usize>,
    p: Vec<usize>,
    x: Vec<usize>,
    best: &mut Vec<usize>,
) {
    if p.is_empty() && x.is_empty() {
        let mut cand = r.clone();
        cand.sort_unstable();
        if cand.len() > best.len() || (cand.len() == best.len() && cand < *best) {
            *best = cand;
        }
        return;
    }
    if r.len() + p.len() < best.len() {
        return;
    }
    let pivot = p
        .iter()
        .chain(&x)
        .copied()
        .max_by_key(|&u| p.iter().filter(|&&v| adj[u][v]).count())
        .expect("p or x non-empty");
    let mut p = p;
    let mut x = x;
    let candidates: Vec<usize> = p.iter().copied().filter(|&v| !adj[pivot][v]).collect();
    for v in candidates {
        r.push(v);
        let np = p.iter().copied().filter(|&u| adj[v][u]).collect();
        let nx = x.iter().copied().filter(|&u| adj[v][u]).collect();
        bron_kerbosch(adj, r, np, nx, best);
        r.pop();
        p.retain(|&u| u != v);
        x.push(v);
    }
}

/// Largest clique among `nodes`; ties go to the lexicographically smallest
/// sorted index list.
fn maximum_clique(adj: &[Vec<bool>], nodes: &[usize]) -> Vec<usize> {
    let mut best = Vec::new();
    bron_kerbosch(adj, &mut Vec::new(), nodes.to_vec(), Vec::new(), &mut best);
    best
}

fn peel(
    relation: &[Vec<bool>],
    clique: impl Fn(&[Vec<bool>], &[usize]) -> Vec<usize>,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = relation.len();
    // off-diagonal adjacency restricted to self-fooled nodes
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && relation[i][j]).collect())
        .collect();
    let mut remaining: Vec<usize> = (0..n).filter(|&i| relation[i][i]).collect();
    let mut clusters = Vec::new();
    loop {
        let c = clique(&adj, &remaining);
        if c.len() < 2 {
            break;
        }
        remaining.retain(|v| !c.contains(v));
        clusters.push(c);
    }
    let clustered: Vec<usize> = clusters.iter().flatten().copied().collect();
    let unclustered = (0..n).filter(|i| !clustered.contains(i)).collect();
    (clusters, unclustered)
}

fn report(
    m: &FoolingMatrix,
    relation: Vec<Vec<bool>>,
    clusters: Vec<Vec<usize>>,
    unclustered: Vec<usize>,
) -> ClusterReport {
    ClusterReport {
        threshold: m.fooled_threshold,
        ids: m.col_ids.clone(),
        fooled: m.fooled(),
        relation,
        clusters,
        unclustered,
    }
}

/// Repeatedly removes a maximum clique of size two or more from the fooling
/// relation until none remains.
pub fn extract_clusters(m: &FoolingMatrix) -> Result<ClusterReport> {
    let relation = fooling_relation(m)?;
    let (clusters, unclustered) = peel(&relation, maximum_clique);
    Ok(report(m, relation, clusters, unclustered))
}

/// Same peeling as [`extract_clusters`] but with cliques found by checking
/// every subset. Exponential; meant as a reference for small matrices.
pub fn extract_clusters_exhaustive(m: &FoolingMatrix) -> Result<ClusterReport> {
    let relation = fooling_relation(m)?;
    if m.rows() > 20 {
        return Err(Error::arg("exhaustive clustering is limited to 20 nodes"));
    }
    let brute = |adj: &[Vec<bool>], nodes: &[usize]| -> Vec<usize> {
        let mut best: Vec<usize> = Vec::new();
        for mask in 1u32..(1u32 << nodes.len()) {
            let set: Vec<usize> = (0..nodes.len())
                .filter(|b| mask >> b & 1 == 1)
                .map(|b| nodes[b])
                .collect();
            let ok = set
                .iter()
                .enumerate()
                .all(|(a, &u)| set[a + 1..].iter().all(|&v| adj[u][v]));
            if !ok {
                continue;
            }
            let mut s = set;
            s.sort_unstable();
            if s.len() > best.len() || (s.len() == best.len() && s < best) {
                best = s;
            }
        }
        best
    };
    let (clusters, unclustered) = peel(&relation, brute);
    Ok(report(m, relation, clusters, unclustered))
}
