//! Loop-less k-widest paths.
//!
//! Yen's deviation scheme with path width (bottleneck residual intensity)
//! as the objective. Paths are ranked by non-increasing width and then by
//! lexicographic node sequence, so the output is fully deterministic.
//!
//! A spur search must return the best completion *under the cap imposed by
//! its root*: once the spur is at least as wide as the root, further width
//! does not help and the lexicographically smallest completion wins. The
//! search therefore finds the widest achievable bottleneck `b`, clamps it to
//! the root width, and then takes the lexicographically smallest simple path
//! whose links all have residual at least that value.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use crate::topology::{LinkId, NodeId, VirtualTopology};

#[derive(Debug, Clone, PartialEq)]
pub struct WidePath {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    /// Minimum residual intensity over the path's links.
    pub width: f64,
}

/// Ranking used everywhere: wider first, then smaller node sequence.
pub fn rank(a: &WidePath, b: &WidePath) -> Ordering {
    b.width
        .total_cmp(&a.width)
        .then_with(|| a.nodes.cmp(&b.nodes))
}

struct Search<'a> {
    view: &'a VirtualTopology,
    dst: NodeId,
    banned_nodes: Vec<bool>,
    banned_links: Vec<bool>,
}

impl Search<'_> {
    fn usable(&self, link: usize, floor: f64) -> bool {
        !self.banned_links[link] && self.view.links()[link].residual >= floor
    }

    /// Whether `node` can be entered: it is the destination or may forward.
    fn enterable(&self, node: NodeId) -> bool {
        !self.banned_nodes[node] && (node == self.dst || self.view.is_transit(node))
    }

    /// Largest bottleneck over paths `from -> dst`.
    fn widest(&self, from: NodeId) -> Option<f64> {
        #[derive(PartialEq)]
        struct Item(f64, NodeId);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                self.0
                    .total_cmp(&other.0)
                    .then_with(|| other.1.cmp(&self.1))
            }
        }

        let n = self.view.node_count();
        let mut best = vec![f64::NEG_INFINITY; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        best[from] = f64::INFINITY;
        heap.push(Item(f64::INFINITY, from));
        while let Some(Item(w, u)) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if u == self.dst {
                return Some(w);
            }
            if u != from && !self.view.is_transit(u) {
                continue;
            }
            for &li in self.view.out_links(u) {
                if self.banned_links[li] {
                    continue;
                }
                let link = &self.view.links()[li];
                if !self.enterable(link.to) || link.to == from {
                    continue;
                }
                let cand = w.min(link.residual);
                if cand > best[link.to] {
                    best[link.to] = cand;
                    heap.push(Item(cand, link.to));
                }
            }
        }
        None
    }

    fn reaches(&self, from: NodeId, floor: f64, visited: &[bool]) -> bool {
        if from == self.dst {
            return true;
        }
        let mut seen = visited.to_vec();
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for &li in self.view.out_links(u) {
                if !self.usable(li, floor) {
                    continue;
                }
                let v = self.view.links()[li].to;
                if v == self.dst {
                    return true;
                }
                if !seen[v] && self.enterable(v) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        false
    }

    /// Lexicographically smallest simple path using links with residual >= floor.
    fn smallest(&self, from: NodeId, floor: f64) -> Option<(Vec<NodeId>, Vec<usize>)> {
        let n = self.view.node_count();
        let mut visited = self.banned_nodes.clone();
        visited[from] = true;
        let mut nodes = vec![from];
        let mut links = Vec::new();
        let mut u = from;
        while u != self.dst {
            // Pick the smallest successor from which dst stays reachable.
            let next = self.view.out_links(u).iter().copied().find(|&li| {
                let v = self.view.links()[li].to;
                self.usable(li, floor)
                    && !visited[v]
                    && self.enterable(v)
                    && self.reaches(v, floor, &visited)
            })?;
            u = self.view.links()[next].to;
            debug_assert!(u < n);
            visited[u] = true;
            nodes.push(u);
            links.push(next);
        }
        Some((nodes, links))
    }
}

fn assemble(view: &VirtualTopology, nodes: Vec<NodeId>, link_idx: &[usize]) -> WidePath {
    let width = link_idx
        .iter()
        .map(|&i| view.links()[i].residual)
        .fold(f64::INFINITY, f64::min);
    WidePath {
        nodes,
        links: link_idx.iter().map(|&i| view.links()[i].id).collect(),
        width,
    }
}

/// Up to `k` simple paths from `src` to `dst`, widest first.
pub fn k_widest_paths(view: &VirtualTopology, src: NodeId, dst: NodeId, k: usize) -> Vec<WidePath> {
    let n = view.node_count();
    if k == 0 || src == dst || src >= n || dst >= n {
        return Vec::new();
    }
    let nlinks = view.links().len();
    let mut search = Search {
        view,
        dst,
        banned_nodes: vec![false; n],
        banned_links: vec![false; nlinks],
    };
    let first = match search.widest(src) {
        Some(b) => search.smallest(src, b),
        None => None,
    };
    let Some((nodes, idx)) = first else {
        return Vec::new();
    };
    // Link indices of accepted paths, parallel to `accepted`.
    let mut accepted_idx: Vec<Vec<usize>> = vec![idx.clone()];
    let mut accepted = vec![assemble(view, nodes, &idx)];
    let mut candidates: Vec<(WidePath, Vec<usize>)> = Vec::new();
    let mut known: BTreeSet<Vec<NodeId>> = BTreeSet::new();
    known.insert(accepted[0].nodes.clone());

    while accepted.len() < k {
        let prev = accepted.last().expect("non-empty").clone();
        let prev_idx = accepted_idx.last().expect("non-empty").clone();
        for i in 0..prev.nodes.len() - 1 {
            let spur = prev.nodes[i];
            let root = &prev.nodes[..=i];
            search.banned_nodes.iter_mut().for_each(|b| *b = false);
            search.banned_links.iter_mut().for_each(|b| *b = false);
            for &r in &root[..i] {
                search.banned_nodes[r] = true;
            }
            for (p, pidx) in accepted.iter().zip(&accepted_idx) {
                if p.nodes.len() > i + 1 && p.nodes[..=i] == *root {
                    search.banned_links[pidx[i]] = true;
                }
            }
            let cap = prev_idx[..i]
                .iter()
                .map(|&li| view.links()[li].residual)
                .fold(f64::INFINITY, f64::min);
            let Some(best) = search.widest(spur) else {
                continue;
            };
            let floor = best.min(cap);
            let Some((spur_nodes, spur_idx)) = search.smallest(spur, floor) else {
                continue;
            };
            let mut nodes = root[..i].to_vec();
            nodes.extend(spur_nodes);
            if known.contains(&nodes) {
                continue;
            }
            let mut idx = prev_idx[..i].to_vec();
            idx.extend(spur_idx);
            known.insert(nodes.clone());
            candidates.push((assemble(view, nodes, &idx), idx));
        }
        let Some(best) =
            (0..candidates.len()).min_by(|&a, &b| rank(&candidates[a].0, &candidates[b].0))
        else {
            break;
        };
        let (path, idx) = candidates.swap_remove(best);
        accepted.push(path);
        accepted_idx.push(idx);
    }
    accepted
}

/// Exhaustive reference: every simple path, sorted by [`rank`], truncated to `k`.
/// Exponential; intended for small graphs in tests and audits.
pub fn all_simple_paths_ranked(
    view: &VirtualTopology,
    src: NodeId,
    dst: NodeId,
    k: usize,
) -> Vec<WidePath> {
    fn dfs(
        view: &VirtualTopology,
        u: NodeId,
        dst: NodeId,
        visited: &mut Vec<bool>,
        nodes: &mut Vec<NodeId>,
        links: &mut Vec<usize>,
        out: &mut Vec<WidePath>,
    ) {
        if u == dst {
            out.push(assemble(view, nodes.clone(), links));
            return;
        }
        if nodes.len() > 1 && !view.is_transit(u) {
            return;
        }
        for (li, l) in view.links().iter().enumerate() {
            if l.from != u || visited[l.to] {
                continue;
            }
            visited[l.to] = true;
            nodes.push(l.to);
            links.push(li);
            dfs(view, l.to, dst, visited, nodes, links, out);
            links.pop();
            nodes.pop();
            visited[l.to] = false;
        }
    }

    if src == dst || src >= view.node_count() || dst >= view.node_count() {
        return Vec::new();
    }
    let mut visited = vec![false; view.node_count()];
    visited[src] = true;
    let mut out = Vec::new();
    dfs(
        view,
        src,
        dst,
        &mut visited,
        &mut vec![src],
        &mut Vec::new(),
        &mut out,
    );
    out.sort_by(rank);
    out.truncate(k);
    out
}
