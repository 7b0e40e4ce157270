//! Exact subgraph isomorphism on clean labels.
//!
//! A mapping is valid when it is injective, preserves node labels and sends
//! every query edge to a data edge. Noisy features are never consulted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest data graph the brute-force enumerator accepts.
pub const BRUTE_FORCE_MAX_NODES: usize = 10;

/// Data-node index assigned to each query node.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IsoMapping(pub Vec<usize>);

impl IsoMapping {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Whether `mapping` is a subgraph isomorphism from `query` into `data`.
///
/// Errors when the mapping has the wrong length or points outside `data`.
pub fn verify_mapping(query: &Graph, data: &Graph, mapping: &[usize]) -> Result<bool> {
    if mapping.len() != query.num_nodes() {
        return Err(Error::invalid(format!(
            "mapping has {} entries for {} query nodes",
            mapping.len(),
            query.num_nodes()
        )));
    }
    let m = data.num_nodes();
    if let Some(&j) = mapping.iter().find(|&&j| j >= m) {
        return Err(Error::invalid(format!("mapping target {j} outside {m} data nodes")));
    }
    let mut used = vec![false; m];
    if mapping.iter().any(|&j| std::mem::replace(&mut used[j], true)) {
        return Ok(false);
    }
    let labels_ok = mapping
        .iter()
        .enumerate()
        .all(|(i, &j)| query.labels()[i] == data.labels()[j]);
    if !labels_ok {
        return Ok(false);
    }
    let adj = data.adjacency();
    Ok(query
        .edges()
        .iter()
        .all(|&(u, v)| adj[mapping[u] * m + mapping[v]]))
}

/// Every subgraph isomorphism, sorted lexicographically.
///
/// Backtracks over query nodes in descending-degree order; a data node is a
/// candidate for query node `i` only if labels agree and its degree is at
/// least `deg(i)`. With `limit`, search stops after that many mappings have
/// been found and those are returned sorted.
pub fn find_all_isomorphisms(query: &Graph, data: &Graph, limit: Option<usize>) -> Vec<IsoMapping> {
    search(query, data, limit, None)
}

/// Whether some isomorphism sends query node `i` to data node `j`.
pub fn pair_in_some_isomorphism(query: &Graph, data: &Graph, i: usize, j: usize) -> bool {
    i < query.num_nodes() && j < data.num_nodes() && !search(query, data, Some(1), Some((i, j))).is_empty()
}

fn search(query: &Graph, data: &Graph, limit: Option<usize>, pinned: Option<(usize, usize)>) -> Vec<IsoMapping> {
    let n = query.num_nodes();
    let m = data.num_nodes();
    let cap = limit.unwrap_or(usize::MAX);
    if cap == 0 || n > m {
        return Vec::new();
    }

    let qdeg = query.degrees();
    let gdeg = data.degrees();
    let qadj = query.adjacency();
    let gadj = data.adjacency();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| qdeg[b].cmp(&qdeg[a]).then(a.cmp(&b)));

    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..m)
                .filter(|&j| query.labels()[i] == data.labels()[j] && gdeg[j] >= qdeg[i])
                .filter(|&j| pinned.is_none_or(|(pi, pj)| pi != i || pj == j))
                .collect()
        })
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return Vec::new();
    }

    // Query neighbours of order[p] that are placed before position p.
    let back_edges: Vec<Vec<usize>> = (0..n)
        .map(|p| {
            order[..p]
                .iter()
                .copied()
                .filter(|&q| qadj[order[p] * n + q])
                .collect()
        })
        .collect();

    let mut state = Search {
        order: &order,
        candidates: &candidates,
        back_edges: &back_edges,
        gadj: &gadj,
        m,
        assignment: vec![usize::MAX; n],
        used: vec![false; m],
        found: Vec::new(),
        cap,
    };
    state.extend(0);
    let mut found = state.found;
    found.sort();
    found
}

struct Search<'a> {
    order: &'a [usize],
    candidates: &'a [Vec<usize>],
    back_edges: &'a [Vec<usize>],
    gadj: &'a [bool],
    m: usize,
    assignment: Vec<usize>,
    used: Vec<bool>,
    found: Vec<IsoMapping>,
    cap: usize,
}

impl Search<'_> {
    fn extend(&mut self, depth: usize) {
        if self.found.len() >= self.cap {
            return;
        }
        if depth == self.order.len() {
            self.found.push(IsoMapping(self.assignment.clone()));
            return;
        }
        let u = self.order[depth];
        for &j in &self.candidates[u] {
            if self.used[j] {
                continue;
            }
            let consistent = self.back_edges[depth]
                .iter()
                .all(|&q| self.gadj[self.assignment[q] * self.m + j]);
            if !consistent {
                continue;
            }
            self.assignment[u] = j;
            self.used[j] = true;
            self.extend(depth + 1);
            self.used[j] = false;
            self.assignment[u] = usize::MAX;
            if self.found.len() >= self.cap {
                return;
            }
        }
    }
}

/// Enumerates every injective map and keeps the valid ones. Test oracle for
/// [`find_all_isomorphisms`]; refuses data graphs above
/// [`BRUTE_FORCE_MAX_NODES`] nodes.
pub fn brute_force_isomorphisms(query: &Graph, data: &Graph) -> Result<Vec<IsoMapping>> {
    let m = data.num_nodes();
    if m > BRUTE_FORCE_MAX_NODES {
        return Err(Error::invalid(format!(
            "brute force refuses data graphs above {BRUTE_FORCE_MAX_NODES} nodes (got {m})"
        )));
    }
    let n = query.num_nodes();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; m];
    enumerate(query, data, n, m, &mut current, &mut used, &mut out)?;
    Ok(out)
}

fn enumerate(
    query: &Graph,
    data: &Graph,
    n: usize,
    m: usize,
    current: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<IsoMapping>,
) -> Result<()> {
    if current.len() == n {
        if verify_mapping(query, data, current)? {
            out.push(IsoMapping(current.clone()));
        }
        return Ok(());
    }
    for j in 0..m {
        if used[j] {
            continue;
        }
        used[j] = true;
        current.push(j);
        enumerate(query, data, n, m, current, used, out)?;
        current.pop();
        used[j] = false;
    }
    Ok(())
}
