use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{HeteroGraph, NodeKey, NodeType};
use crate::error::{config_err, Error, Result};

/// Type pattern for constrained walks, e.g. `PLP` or `PLNLP`. First and last
/// types coincide so the pattern can repeat.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MetaPath(Vec<NodeType>);

impl MetaPath {
    pub fn new(types: Vec<NodeType>) -> Result<Self> {
        if types.len() < 2 {
            return Err(config_err("a metapath needs at least two node types"));
        }
        if types.first() != types.last() {
            return Err(config_err("a metapath must start and end with the same node type"));
        }
        Ok(Self(types))
    }

    pub fn types(&self) -> &[NodeType] {
        &self.0
    }

    pub fn start(&self) -> NodeType {
        self.0[0]
    }

    /// Type expected at walk position `i` (position 0 is the start).
    pub fn type_at(&self, i: usize) -> NodeType {
        self.0[i % (self.0.len() - 1)]
    }

    pub fn defaults() -> Vec<MetaPath> {
        vec!["PLP".parse().expect("valid"), "PLNLP".parse().expect("valid")]
    }
}

impl FromStr for MetaPath {
    type Err = Error;

    /// Accepts `PLP`, `P-L-P` or `[P,L,P]`.
    fn from_str(s: &str) -> Result<Self> {
        let types = s
            .chars()
            .filter(|c| !matches!(c, '[' | ']' | ',' | '-' | ' '))
            .map(NodeType::from_letter)
            .collect::<Result<Vec<_>>>()?;
        Self::new(types)
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{}", t.letter())?;
        }
        Ok(())
    }
}

impl Serialize for MetaPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetaPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Walks as graph node indices, plus the keys needed to interpret them.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkCorpus {
    pub keys: Vec<NodeKey>,
    pub walks: Vec<Vec<u32>>,
    pub walk_len: usize,
    pub walks_per_node: usize,
    pub metapaths: Vec<MetaPath>,
}

impl WalkCorpus {
    pub fn token_count(&self) -> usize {
        self.walks.iter().map(Vec::len).sum()
    }
}

fn check_len(walk_len: usize) -> Result<()> {
    if walk_len == 0 {
        return Err(config_err("walk length must be at least 1"));
    }
    Ok(())
}

/// `walks_per_node` uniform truncated walks from every node. A walk stops
/// early at a node without neighbors.
pub fn random_walks<R: Rng + ?Sized>(
    g: &HeteroGraph,
    walk_len: usize,
    walks_per_node: usize,
    rng: &mut R,
) -> Result<WalkCorpus> {
    check_len(walk_len)?;
    let mut walks = Vec::with_capacity(g.node_count() * walks_per_node);
    for _ in 0..walks_per_node {
        for start in 0..g.node_count() as u32 {
            let mut walk = Vec::with_capacity(walk_len);
            walk.push(start);
            let mut cur = start;
            while walk.len() < walk_len {
                let (nb, _) = g.neighbors(cur);
                if nb.is_empty() {
                    break;
                }
                cur = nb[rng.random_range(0..nb.len())];
                walk.push(cur);
            }
            walks.push(walk);
        }
    }
    Ok(WalkCorpus { keys: g.keys().to_vec(), walks, walk_len, walks_per_node, metapaths: Vec::new() })
}

/// Weighted walks following the cyclic type pattern. With several metapaths
/// the `j`-th round of walks uses `metapaths[j % len]`, starting from every
/// node of that metapath's first type.
pub fn metapath_walks<R: Rng + ?Sized>(
    g: &HeteroGraph,
    metapaths: &[MetaPath],
    walk_len: usize,
    walks_per_node: usize,
    rng: &mut R,
) -> Result<WalkCorpus> {
    check_len(walk_len)?;
    if metapaths.is_empty() {
        return Err(config_err("at least one metapath is required"));
    }
    let mut walks = Vec::new();
    for round in 0..walks_per_node {
        let mp = &metapaths[round % metapaths.len()];
        for start in g.nodes_of_type(mp.start()) {
            let mut walk = Vec::with_capacity(walk_len);
            walk.push(start);
            let mut cur = start;
            while walk.len() < walk_len {
                let u: f64 = rng.random();
                match g.weighted_pick(cur, mp.type_at(walk.len()), u) {
                    Some(next) => {
                        cur = next;
                        walk.push(cur);
                    }
                    None => break,
                }
            }
            walks.push(walk);
        }
    }
    Ok(WalkCorpus { keys: g.keys().to_vec(), walks, walk_len, walks_per_node, metapaths: metapaths.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(i: u32) -> NodeKey {
        NodeKey::person(i)
    }
    fn l(i: u32) -> NodeKey {
        NodeKey::location(i)
    }

    #[test]
    fn path_graph_alternates() {
        let g = HeteroGraph::from_edges([p(0), p(1)], &[(p(0), p(1), 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = random_walks(&g, 3, 1, &mut rng).unwrap();
        assert_eq!(c.walks[0], vec![0, 1, 0]);
    }

    #[test]
    fn isolated_node_walk_has_length_one() {
        let g = HeteroGraph::from_edges([p(0)], &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_walks(&g, 5, 2, &mut rng).unwrap().walks, vec![vec![0], vec![0]]);
        assert!(random_walks(&g, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn star_center_frequency() {
        let edges: Vec<_> = (1..=4).map(|i| (p(0), p(i), 1.0)).collect();
        let g = HeteroGraph::from_edges((0..=4).map(p), &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_walks(&g, 20, 200, &mut rng).unwrap();
        let center = c.walks.iter().flatten().filter(|&&v| v == 0).count();
        let freq = center as f64 / c.token_count() as f64;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn metapath_follows_pattern_and_weights() {
        let g = HeteroGraph::from_edges(
            [p(0), p(1), p(2), l(0), l(1)],
            &[(p(0), l(0), 3.0), (p(0), l(1), 1.0), (p(1), l(0), 1.0), (p(0), p(1), 5.0)],
        )
        .unwrap();
        let mp: MetaPath = "PLP".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = metapath_walks(&g, std::slice::from_ref(&mp), 7, 4000, &mut rng).unwrap();
        let mut to_l0 = 0;
        let mut from_p0 = 0;
        for w in &c.walks {
            for (i, &v) in w.iter().enumerate() {
                assert_eq!(g.node_type(v), mp.type_at(i));
            }
            if g.key(w[0]) == p(0) && w.len() > 1 {
                from_p0 += 1;
                to_l0 += usize::from(g.key(w[1]) == l(0));
            }
            if g.key(w[0]) == p(2) {
                assert_eq!(w.len(), 1);
            }
        }
        let share = to_l0 as f64 / from_p0 as f64;
        assert!((share - 0.75).abs() < 0.03, "{share}");
    }

    #[test]
    fn metapath_parsing() {
        let a: MetaPath = "[P,L,N,L,P]".parse().unwrap();
        assert_eq!(a.to_string(), "PLNLP");
        assert_eq!(a.type_at(4), NodeType::Person);
        assert_eq!(a.type_at(6), NodeType::Neighborhood);
        assert!("PLX".parse::<MetaPath>().is_err());
        assert!("PL".parse::<MetaPath>().is_err());
        assert!("P".parse::<MetaPath>().is_err());
    }
}
