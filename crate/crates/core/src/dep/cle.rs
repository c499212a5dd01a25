//! Maximum spanning arborescence over a dense edge-score matrix
//! (Chu-Liu-Edmonds with recursive cycle contraction).

use crate::state::StructuredLabel;
use crate::{Error, Result};

/// Dense directed edge scores over root (node 0) plus `n` words.
/// `get(h, d)` is the score of attaching word `d` under head `h`. Entries on
/// the diagonal and into the root are fixed at `-inf` by construction.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    /// All-forbidden matrix for `n` words (every entry `-inf`).
    pub fn new(n: usize) -> Self {
        let side = n + 1;
        ScoreMatrix { n, data: vec![f64::NEG_INFINITY; side * side] }
    }

    pub fn num_words(&self) -> usize {
        self.n
    }

    pub fn get(&self, head: usize, dep: usize) -> f64 {
        self.data[head * (self.n + 1) + dep]
    }

    pub fn set(&mut self, head: usize, dep: usize, v: f64) {
        assert!(head != dep && dep != 0, "edge ({head} -> {dep}) is structurally forbidden");
        self.data[head * (self.n + 1) + dep] = v;
    }
}

/// True iff `heads` (entry `c` = head of word `c + 1`, 0 = root) forms a tree:
/// every word reaches the root without revisiting a node.
pub fn is_valid_tree(heads: &StructuredLabel) -> bool {
    let n = heads.len();
    if heads.0.iter().enumerate().any(|(c, &h)| h > n || h == c + 1) {
        return false;
    }
    for start in 1..=n {
        let mut seen = vec![false; n + 1];
        let mut v = start;
        while v != 0 {
            if seen[v] {
                return false;
            }
            seen[v] = true;
            v = heads.0[v - 1];
        }
    }
    true
}

/// Decodes the maximum spanning arborescence rooted at node 0.
///
/// Greedy-edge ties are broken toward the smaller head index (heads are
/// scanned in ascending order and only a strictly better score replaces the
/// incumbent), which makes decoding deterministic.
pub fn cle_mst(m: &ScoreMatrix) -> Result<StructuredLabel> {
    if m.n == 0 {
        return Err(Error::EmptyInput("spanning-tree decode over zero words"));
    }
    let parents = solve(m.n + 1, &m.data);
    Ok(StructuredLabel(parents[1..].to_vec()))
}

fn solve(num_nodes: usize, score: &[f64]) -> Vec<usize> {
    debug_assert_eq!(score.len(), num_nodes * num_nodes);
    let at = |h: usize, d: usize| score[h * num_nodes + d];

    // Greedy best head per node; fall back to the root when a column is
    // entirely forbidden (keeps degenerate matrices decodable).
    let mut parent = vec![0usize; num_nodes];
    for d in 1..num_nodes {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0usize;
        for h in 0..num_nodes {
            if h != d && at(h, d) > best {
                best = at(h, d);
                arg = h;
            }
        }
        parent[d] = arg;
    }

    // Look for a cycle in the parent graph.
    let cycle = find_cycle(&parent);
    let Some(cycle) = cycle else {
        return parent;
    };

    let in_cycle: Vec<bool> = {
        let mut v = vec![false; num_nodes];
        cycle.iter().for_each(|&c| v[c] = true);
        v
    };
    let cycle_score: f64 = cycle.iter().map(|&v| at(parent[v], v)).sum();

    // Contract the cycle into one supernode appended after the survivors.
    let old_of: Vec<usize> = (0..num_nodes).filter(|&v| !in_cycle[v]).collect();
    let mut new_of = vec![usize::MAX; num_nodes];
    for (new, &old) in old_of.iter().enumerate() {
        new_of[old] = new;
    }
    let sub_nodes = old_of.len() + 1;
    let super_id = sub_nodes - 1;
    let mut sub = vec![f64::NEG_INFINITY; sub_nodes * sub_nodes];
    // Which cycle node an incoming edge would break the cycle at, per source.
    let mut entry_point = vec![usize::MAX; num_nodes];
    // Which cycle node an outgoing edge leaves from, per target.
    let mut exit_point = vec![usize::MAX; num_nodes];

    for &u in &old_of {
        for &w in &old_of {
            if u != w {
                sub[new_of[u] * sub_nodes + new_of[w]] = at(u, w);
            }
        }
        // u -> supernode: best way to enter the cycle from u, paying the whole
        // cycle except the edge the entry displaces.
        let mut best = f64::NEG_INFINITY;
        for &v in &cycle {
            let s = at(u, v) - at(parent[v], v) + cycle_score;
            if s > best {
                best = s;
                entry_point[u] = v;
            }
        }
        sub[new_of[u] * sub_nodes + super_id] = best;
        // supernode -> u: best edge out of the cycle.
        let mut best = f64::NEG_INFINITY;
        for &v in &cycle {
            if at(v, u) > best {
                best = at(v, u);
                exit_point[u] = v;
            }
        }
        if u != 0 {
            sub[super_id * sub_nodes + new_of[u]] = best;
        }
    }

    let sub_parent = solve(sub_nodes, &sub);

    // Expand the contracted solution back to the original nodes.
    let mut result = vec![0usize; num_nodes];
    for &w in &old_of {
        if w == 0 {
            continue;
        }
        let p = sub_parent[new_of[w]];
        result[w] = if p == super_id { exit_point[w] } else { old_of[p] };
    }
    let entering = old_of[sub_parent[super_id]];
    let broken = entry_point[entering];
    for &v in &cycle {
        result[v] = if v == broken { entering } else { parent[v] };
    }
    result
}

fn find_cycle(parent: &[usize]) -> Option<Vec<usize>> {
    // 0 = unvisited, 1 = on current walk, 2 = settled.
    let mut color = vec![0u8; parent.len()];
    color[0] = 2;
    for start in 1..parent.len() {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while color[v] == 0 {
            color[v] = 1;
            path.push(v);
            v = parent[v];
        }
        if color[v] == 1 {
            // Walked into our own path: the tail from v is a cycle.
            let pos = path.iter().position(|&x| x == v).unwrap();
            return Some(path[pos..].to_vec());
        }
        path.iter().for_each(|&x| color[x] = 2);
    }
    None
}
