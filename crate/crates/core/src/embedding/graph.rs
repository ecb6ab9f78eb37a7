use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Person,
    Location,
    Neighborhood,
}

impl NodeType {
    pub const ALL: [NodeType; 3] = [Self::Person, Self::Location, Self::Neighborhood];

    pub fn letter(self) -> char {
        match self {
            Self::Person => 'P',
            Self::Location => 'L',
            Self::Neighborhood => 'N',
        }
    }

    pub fn from_letter(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'P' => Ok(Self::Person),
            'L' => Ok(Self::Location),
            'N' => Ok(Self::Neighborhood),
            _ => Err(config_err(format!("unknown node type {c:?}"))),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Typed node identity. Orders by type, then id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub ty: NodeType,
    pub id: u32,
}

impl NodeKey {
    pub fn new(ty: NodeType, id: u32) -> Self {
        Self { ty, id }
    }

    pub fn person(id: u32) -> Self {
        Self::new(NodeType::Person, id)
    }

    pub fn location(id: u32) -> Self {
        Self::new(NodeType::Location, id)
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.ty.letter(), self.id)
    }
}

/// Undirected weighted graph over typed nodes, stored as CSR.
///
/// Node indices follow key order, so each adjacency row is sorted by
/// (type, id) and the neighbors of one type form a contiguous run.
#[derive(Clone, Debug, Default)]
pub struct HeteroGraph {
    keys: Vec<NodeKey>,
    type_start: [u32; 4],
    offsets: Vec<usize>,
    nbrs: Vec<u32>,
    weights: Vec<f64>,
    /// Running weight total within each row.
    cum: Vec<f64>,
}

impl HeteroGraph {
    /// Duplicate nodes are merged, parallel edges have their weights summed.
    pub fn from_edges(nodes: impl IntoIterator<Item = NodeKey>, edges: &[(NodeKey, NodeKey, f64)]) -> Result<Self> {
        let mut keys: Vec<NodeKey> = nodes.into_iter().collect();
        keys.sort_unstable();
        keys.dedup();
        let lookup = |k: &NodeKey| {
            keys.binary_search(k)
                .map(|i| i as u32)
                .map_err(|_| Error::InvalidInput(format!("edge endpoint {k} is not a node")))
        };
        let mut half = Vec::with_capacity(edges.len() * 2);
        for (a, b, w) in edges {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidInput(format!("edge {a}-{b} has weight {w}")));
            }
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                continue;
            }
            half.push((ia, ib, *w));
            half.push((ib, ia, *w));
        }
        half.sort_unstable_by_key(|x| (x.0, x.1));
        let n = keys.len();
        let mut offsets = vec![0usize; n + 1];
        let mut nbrs = Vec::with_capacity(half.len());
        let mut weights: Vec<f64> = Vec::with_capacity(half.len());
        let mut rows = Vec::with_capacity(half.len());
        for (a, b, w) in half {
            if rows.last() == Some(&a) && nbrs.last() == Some(&b) {
                *weights.last_mut().expect("non-empty") += w;
                continue;
            }
            rows.push(a);
            nbrs.push(b);
            weights.push(w);
            offsets[a as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut cum = vec![0.0; weights.len()];
        for v in 0..n {
            let mut acc = 0.0;
            for k in offsets[v]..offsets[v + 1] {
                acc += weights[k];
                cum[k] = acc;
            }
        }
        let mut type_start = [0u32; 4];
        for t in NodeType::ALL {
            type_start[t.index()] = keys.partition_point(|k| k.ty < t) as u32;
        }
        type_start[3] = n as u32;
        Ok(Self { keys, type_start, offsets, nbrs, weights, cum })
    }

    pub fn node_count(&self) -> usize {
        self.keys.len()
    }

    /// Undirected edges.
    pub fn edge_count(&self) -> usize {
        self.nbrs.len() / 2
    }

    pub fn keys(&self) -> &[NodeKey] {
        &self.keys
    }

    pub fn key(&self, v: u32) -> NodeKey {
        self.keys[v as usize]
    }

    pub fn index_of(&self, key: NodeKey) -> Option<u32> {
        self.keys.binary_search(&key).ok().map(|i| i as u32)
    }

    pub fn node_type(&self, v: u32) -> NodeType {
        self.keys[v as usize].ty
    }

    pub fn nodes_of_type(&self, ty: NodeType) -> impl Iterator<Item = u32> {
        self.type_start[ty.index()]..self.type_start[ty.index() + 1]
    }

    pub fn neighbors(&self, v: u32) -> (&[u32], &[f64]) {
        let r = self.offsets[v as usize]..self.offsets[v as usize + 1];
        (&self.nbrs[r.clone()], &self.weights[r])
    }

    pub fn degree(&self, v: u32) -> usize {
        self.offsets[v as usize + 1] - self.offsets[v as usize]
    }

    /// Positions in the adjacency arrays of `v`'s neighbors of type `ty`.
    fn type_range(&self, v: u32, ty: NodeType) -> std::ops::Range<usize> {
        let (s, e) = (self.offsets[v as usize], self.offsets[v as usize + 1]);
        let row = &self.nbrs[s..e];
        let lo = row.partition_point(|&u| u < self.type_start[ty.index()]);
        let hi = row.partition_point(|&u| u < self.type_start[ty.index() + 1]);
        s + lo..s + hi
    }

    pub fn neighbors_of_type(&self, v: u32, ty: NodeType) -> (&[u32], &[f64]) {
        let r = self.type_range(v, ty);
        (&self.nbrs[r.clone()], &self.weights[r])
    }

    pub fn edge_weight(&self, a: NodeKey, b: NodeKey) -> Option<f64> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        let (nb, w) = self.neighbors(ia);
        nb.binary_search(&ib).ok().map(|k| w[k])
    }

    /// Neighbor of type `ty` drawn proportionally to edge weight, given `u` in `[0, 1)`.
    pub(crate) fn weighted_pick(&self, v: u32, ty: NodeType, u: f64) -> Option<u32> {
        let r = self.type_range(v, ty);
        if r.is_empty() {
            return None;
        }
        let row_start = self.offsets[v as usize];
        let base = if r.start > row_start { self.cum[r.start - 1] } else { 0.0 };
        let target = base + u * (self.cum[r.end - 1] - base);
        let k = r.start + self.cum[r.clone()].partition_point(|&c| c <= target);
        Some(self.nbrs[k.min(r.end - 1)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u32) -> NodeKey {
        NodeKey::person(i)
    }
    fn l(i: u32) -> NodeKey {
        NodeKey::location(i)
    }

    #[test]
    fn typed_adjacency() {
        let n0 = NodeKey::new(NodeType::Neighborhood, 0);
        let g = HeteroGraph::from_edges(
            [p(0), p(1), l(0), l(1), n0],
            &[(p(0), l(0), 3.0), (p(0), l(1), 1.0), (p(1), l(0), 2.0), (l(0), n0, 1.0), (p(0), l(0), 1.0)],
        )
        .unwrap();
        assert_eq!(g.node_count(), 5);
        assert_eq!(g.edge_count(), 4);
        assert_eq!(g.edge_weight(p(0), l(0)), Some(4.0));
        assert_eq!(g.edge_weight(l(0), p(0)), Some(4.0));
        let v = g.index_of(l(0)).unwrap();
        let (nb, _) = g.neighbors_of_type(v, NodeType::Person);
        assert_eq!(nb.iter().map(|&u| g.key(u)).collect::<Vec<_>>(), vec![p(0), p(1)]);
        let (nb, _) = g.neighbors_of_type(v, NodeType::Neighborhood);
        assert_eq!(nb.len(), 1);
        assert_eq!(g.nodes_of_type(NodeType::Location).count(), 2);
    }

    #[test]
    fn weighted_pick_uses_type_run() {
        let g = HeteroGraph::from_edges([p(0), l(0), l(1), p(1)], &[(p(0), l(0), 3.0), (p(0), l(1), 1.0)]).unwrap();
        let v = g.index_of(p(0)).unwrap();
        let l0 = g.index_of(l(0)).unwrap();
        let l1 = g.index_of(l(1)).unwrap();
        assert_eq!(g.weighted_pick(v, NodeType::Location, 0.0), Some(l0));
        assert_eq!(g.weighted_pick(v, NodeType::Location, 0.74), Some(l0));
        assert_eq!(g.weighted_pick(v, NodeType::Location, 0.76), Some(l1));
        assert_eq!(g.weighted_pick(v, NodeType::Person, 0.5), None);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(HeteroGraph::from_edges([p(0)], &[(p(0), l(0), 1.0)]).is_err());
        assert!(HeteroGraph::from_edges([p(0), l(0)], &[(p(0), l(0), 0.0)]).is_err());
        assert!(NodeType::from_letter('x').is_err());
    }
}
