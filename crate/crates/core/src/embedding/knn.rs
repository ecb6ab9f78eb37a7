use std::cmp::Ordering;

use super::graph::NodeKey;
use super::skipgram::{dist, EmbeddingTable};
use crate::error::{Error, Result};

/// Above this many member nodes queries go through a vantage-point tree.
pub const VP_TREE_THRESHOLD: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub key: NodeKey,
    pub dist: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnResult {
    /// Ascending by distance, ties by key.
    pub neighbors: Vec<Neighbor>,
    /// Fewer than `k` members were available.
    pub short: bool,
}

fn order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.dist.total_cmp(&b.dist).then(a.key.cmp(&b.key))
}

/// Bounded best-k list kept sorted.
struct Best {
    k: usize,
    items: Vec<Neighbor>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1) }
    }

    fn offer(&mut self, n: Neighbor) {
        if self.items.len() == self.k && order(&n, self.items.last().expect("k >= 1")) != Ordering::Less {
            return;
        }
        let at = self.items.partition_point(|x| order(x, &n) == Ordering::Less);
        self.items.insert(at, n);
        self.items.truncate(self.k);
    }

    /// Current pruning radius.
    fn tau(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items.last().expect("full").dist
        }
    }
}

struct VpNode {
    point: u32,
    mu: f64,
    inside: Option<u32>,
    outside: Option<u32>,
}

/// Exact nearest neighbors among a fixed member set of an embedding table.
pub struct KnnIndex<'a> {
    table: &'a EmbeddingTable,
    /// Table rows of the members.
    members: Vec<u32>,
    nodes: Vec<VpNode>,
    root: Option<u32>,
}

impl<'a> KnnIndex<'a> {
    /// Members missing from the table are ignored.
    pub fn new(table: &'a EmbeddingTable, members: impl IntoIterator<Item = NodeKey>) -> Self {
        let mut rows: Vec<u32> = members.into_iter().filter_map(|k| table.index_of(k)).map(|i| i as u32).collect();
        rows.sort_unstable();
        rows.dedup();
        let mut idx = Self { table, members: rows, nodes: Vec::new(), root: None };
        if idx.members.len() > VP_TREE_THRESHOLD {
            idx.build_tree();
        }
        idx
    }

    /// Force the tree regardless of size (used to cross-check it).
    pub fn with_tree(table: &'a EmbeddingTable, members: impl IntoIterator<Item = NodeKey>) -> Self {
        let mut idx = Self::new(table, members);
        if idx.root.is_none() {
            idx.build_tree();
        }
        idx
    }

    /// Exhaustive scan only.
    pub fn brute_force(table: &'a EmbeddingTable, members: impl IntoIterator<Item = NodeKey>) -> Self {
        let mut idx = Self::new(table, members);
        idx.nodes.clear();
        idx.root = None;
        idx
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn uses_tree(&self) -> bool {
        self.root.is_some()
    }

    fn build_tree(&mut self) {
        let mut items = self.members.clone();
        self.nodes.clear();
        self.nodes.reserve(items.len());
        self.root = self.build(&mut items);
    }

    fn build(&mut self, items: &mut [u32]) -> Option<u32> {
        let (first, rest) = items.split_first_mut()?;
        let vp = *first;
        let at = self.nodes.len() as u32;
        self.nodes.push(VpNode { point: vp, mu: 0.0, inside: None, outside: None });
        if rest.is_empty() {
            return Some(at);
        }
        let x = self.table.vector_at(vp as usize);
        let mut with_d: Vec<(f64, u32)> =
            rest.iter().map(|&r| (dist(x, self.table.vector_at(r as usize)), r)).collect();
        let mid = (with_d.len() - 1) / 2;
        with_d.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mu = with_d[mid].0;
        for (slot, (_, r)) in rest.iter_mut().zip(&with_d) {
            *slot = *r;
        }
        let (inside, outside) = rest.split_at_mut(mid + 1);
        let i = self.build(inside);
        let o = self.build(outside);
        let node = &mut self.nodes[at as usize];
        node.mu = mu;
        node.inside = i;
        node.outside = o;
        Some(at)
    }

    /// The `k` members closest to `query`, skipping `exclude`.
    pub fn query(&self, query: &[f32], k: usize, exclude: Option<NodeKey>) -> KnnResult {
        let mut best = Best::new(k.max(1));
        if k > 0 {
            match self.root {
                Some(r) => self.search(r, query, exclude, &mut best),
                None => {
                    for &m in &self.members {
                        self.consider(m, query, exclude, &mut best);
                    }
                }
            }
        }
        let neighbors = if k == 0 { Vec::new() } else { best.items };
        KnnResult { short: neighbors.len() < k, neighbors }
    }

    fn consider(&self, row: u32, query: &[f32], exclude: Option<NodeKey>, best: &mut Best) -> f64 {
        let d = dist(query, self.table.vector_at(row as usize));
        let key = self.table.keys()[row as usize];
        if Some(key) != exclude {
            best.offer(Neighbor { key, dist: d });
        }
        d
    }

    fn search(&self, at: u32, query: &[f32], exclude: Option<NodeKey>, best: &mut Best) {
        let node = &self.nodes[at as usize];
        let d = self.consider(node.point, query, exclude, best);
        // Slack covers rounding in the triangle inequality; it only widens the search.
        let slack = |t: f64| t + 1e-9 * (1.0 + t);
        let (first, second) = if d < node.mu { (node.inside, node.outside) } else { (node.outside, node.inside) };
        if let Some(c) = first {
            self.search(c, query, exclude, best);
        }
        let reach = slack(best.tau());
        let needed = if d < node.mu { node.mu - d <= reach } else { d - node.mu <= reach };
        if needed {
            if let Some(c) = second {
                self.search(c, query, exclude, best);
            }
        }
    }
}

/// The `k` labelled nodes nearest to `v`, excluding `v` itself.
pub fn knn(table: &EmbeddingTable, v: NodeKey, k: usize, labelled: &[NodeKey]) -> Result<KnnResult> {
    let x = table.vector(v).ok_or_else(|| Error::InvalidInput(format!("node {v} has no embedding")))?;
    Ok(KnnIndex::new(table, labelled.iter().copied()).query(x, k, Some(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_from(points: &[Vec<f32>]) -> EmbeddingTable {
        let keys = (0..points.len() as u32).map(NodeKey::person).collect();
        EmbeddingTable::from_vectors(keys, points[0].len(), points.concat()).unwrap()
    }

    fn brute(points: &[Vec<f32>], q: &[f32], k: usize, exclude: Option<u32>) -> Vec<(u32, f64)> {
        let mut all: Vec<(u32, f64)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i as u32) != exclude)
            .map(|(i, p)| {
                let d: f64 = p.iter().zip(q).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>().sqrt();
                (i as u32, d)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn one_dimensional_example() {
        let t = table_from(&[vec![0.0], vec![1.0], vec![5.0]]);
        let idx = KnnIndex::new(&t, t.keys().to_vec());
        let r = idx.query(&[0.4], 2, None);
        assert_eq!(r.neighbors.iter().map(|n| n.key.id).collect::<Vec<_>>(), vec![0, 1]);
        assert!(!r.short);
        let r = idx.query(&[0.4], 5, None);
        assert_eq!(r.neighbors.len(), 3);
        assert!(r.short);
    }

    #[test]
    fn excludes_query_node() {
        let t = table_from(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 0.0]]);
        let r = knn(&t, NodeKey::person(0), 1, t.keys()).unwrap();
        assert_eq!(r.neighbors[0].key, NodeKey::person(1));
    }

    #[test]
    fn tree_and_scan_agree_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Integer grid coordinates produce many exact ties.
        let points: Vec<Vec<f32>> = (0..800).map(|_| (0..3).map(|_| rng.random_range(0..6) as f32).collect()).collect();
        let t = table_from(&points);
        let tree = KnnIndex::with_tree(&t, t.keys().to_vec());
        let scan = KnnIndex::brute_force(&t, t.keys().to_vec());
        assert!(tree.uses_tree() && !scan.uses_tree());
        for qi in 0..200 {
            let q = &points[qi];
            let a = tree.query(q, 10, Some(NodeKey::person(qi as u32)));
            let b = scan.query(q, 10, Some(NodeKey::person(qi as u32)));
            assert_eq!(a, b);
            let want = brute(&points, q, 10, Some(qi as u32));
            let got: Vec<(u32, f64)> = a.neighbors.iter().map(|n| (n.key.id, n.dist)).collect();
            assert_eq!(got, want);
        }
    }
}
