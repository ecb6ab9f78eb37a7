use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::graph::{NodeKey, NodeType};
use super::walks::WalkCorpus;
use crate::error::{config_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting learning rate, decayed linearly towards zero.
    pub lr: f64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        Self { dim: 64, window: 5, negatives: 5, epochs: 3, lr: 0.025 }
    }
}

impl SkipGramParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(config_err("embedding dimension must be at least 2"));
        }
        if self.window == 0 {
            return Err(config_err("skip-gram window must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_err("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub params: SkipGramParams,
    pub seed: u64,
}

/// Input vectors `x_v` for every node of the corpus, plus the output vectors
/// kept for warm starts.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    keys: Vec<NodeKey>,
    index: HashMap<NodeKey, u32>,
    dim: usize,
    vectors: Vec<f32>,
    context: Vec<f32>,
    pub meta: TrainingMeta,
}

impl EmbeddingTable {
    /// Table from explicit row-major vectors (no training metadata beyond the dimension).
    pub fn from_vectors(keys: Vec<NodeKey>, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 || vectors.len() != keys.len() * dim {
            return Err(Error::InvalidInput(format!(
                "{} values do not form {} vectors of dimension {dim}",
                vectors.len(),
                keys.len()
            )));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("embedding values must be finite".into()));
        }
        let index: HashMap<NodeKey, u32> = keys.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect();
        if index.len() != keys.len() {
            return Err(Error::InvalidInput("duplicate node keys".into()));
        }
        let context = vec![0.0; vectors.len()];
        let params = SkipGramParams { dim, epochs: 0, ..Default::default() };
        Ok(Self { keys, index, dim, vectors, context, meta: TrainingMeta { params, seed: 0 } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[NodeKey] {
        &self.keys
    }

    pub fn index_of(&self, key: NodeKey) -> Option<usize> {
        self.index.get(&key).map(|&i| i as usize)
    }

    pub fn vector_at(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, key: NodeKey) -> Option<&[f32]> {
        self.index_of(key).map(|i| self.vector_at(i))
    }

    /// Text matrix: a header line `nodes dim`, then one line per node with
    /// its key (`P12`, `L3`, `N0`) followed by the vector components.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, k) in self.keys.iter().enumerate() {
            write!(w, "{k}")?;
            for x in self.vector_at(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Euclidean distance, accumulated in f64.
pub fn distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(dist(a, b))
}

pub(crate) fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// (center, context) pairs within a fixed window, in walk order.
pub fn training_pairs(walk: &[u32], window: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for i in 0..walk.len() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(walk.len() - 1);
        for j in lo..=hi {
            if j != i {
                out.push((walk[i], walk[j]));
            }
        }
    }
    out
}

fn pair_count(len: usize, window: usize) -> usize {
    (0..len).map(|i| (i + window).min(len - 1) - i.saturating_sub(window)).sum()
}

/// Per-type unigram^0.75 negative samplers over corpus nodes.
struct NegativeTables {
    by_type: [Option<(Vec<u32>, WeightedAliasIndex<f64>)>; 3],
}

impl NegativeTables {
    fn new(corpus: &WalkCorpus) -> Self {
        let mut freq = vec![0u64; corpus.keys.len()];
        for &v in corpus.walks.iter().flatten() {
            freq[v as usize] += 1;
        }
        let by_type = NodeType::ALL.map(|t| {
            let nodes: Vec<u32> = (0..corpus.keys.len() as u32)
                .filter(|&v| corpus.keys[v as usize].ty == t && freq[v as usize] > 0)
                .collect();
            if nodes.is_empty() {
                return None;
            }
            let w: Vec<f64> = nodes.iter().map(|&v| (freq[v as usize] as f64).powf(0.75)).collect();
            Some((nodes, WeightedAliasIndex::new(w).expect("positive weights")))
        });
        Self { by_type }
    }

    fn sample<R: Rng + ?Sized>(&self, ty: NodeType, rng: &mut R) -> Option<u32> {
        self.by_type[ty as usize].as_ref().map(|(nodes, alias)| nodes[alias.sample(rng)])
    }
}

/// Skip-gram with negative sampling. Negatives are drawn from nodes of the
/// context node's type only. Nodes present in `warm` start from their previous
/// vectors; the rest start from the seeded random initialisation.
pub fn train_skipgram(
    corpus: &WalkCorpus,
    params: &SkipGramParams,
    seed: u64,
    warm: Option<&EmbeddingTable>,
) -> Result<EmbeddingTable> {
    params.validate()?;
    if corpus.walks.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty corpus".into()));
    }
    let dim = params.dim;
    let n = corpus.keys.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<f32> = (0..n * dim).map(|_| (rng.random::<f32>() - 0.5) / dim as f32).collect();
    let mut context = vec![0.0f32; n * dim];
    if let Some(prev) = warm.filter(|p| p.dim == dim) {
        for (i, k) in corpus.keys.iter().enumerate() {
            if let Some(j) = prev.index_of(*k) {
                vectors[i * dim..(i + 1) * dim].copy_from_slice(prev.vector_at(j));
                context[i * dim..(i + 1) * dim].copy_from_slice(&prev.context[j * dim..(j + 1) * dim]);
            }
        }
    }

    let negatives = NegativeTables::new(corpus);
    let per_epoch: usize = corpus.walks.iter().map(|w| pair_count(w.len(), params.window)).sum();
    let total = (per_epoch * params.epochs).max(1) as f64;
    let mut done = 0usize;
    let mut grad = vec![0.0f32; dim];
    for _ in 0..params.epochs {
        for walk in &corpus.walks {
            for i in 0..walk.len() {
                let lo = i.saturating_sub(params.window);
                let hi = (i + params.window).min(walk.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let lr = (params.lr * (1.0 - done as f64 / total)).max(params.lr * 1e-4) as f32;
                    done += 1;
                    let (center, target) = (walk[i] as usize, walk[j] as usize);
                    let ty = corpus.keys[target].ty;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for s in 0..=params.negatives {
                        let (out, label) = if s == 0 {
                            (target, 1.0f32)
                        } else {
                            match negatives.sample(ty, &mut rng) {
                                Some(v) if v as usize != target => (v as usize, 0.0),
                                _ => continue,
                            }
                        };
                        let x = &vectors[center * dim..(center + 1) * dim];
                        let y = &mut context[out * dim..(out + 1) * dim];
                        let f: f32 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(f)) * lr;
                        for k in 0..dim {
                            grad[k] += g * y[k];
                            y[k] += g * x[k];
                        }
                    }
                    for (v, g) in vectors[center * dim..(center + 1) * dim].iter_mut().zip(&grad) {
                        *v += g;
                    }
                }
            }
        }
    }

    let index = corpus.keys.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect();
    Ok(EmbeddingTable {
        keys: corpus.keys.clone(),
        index,
        dim,
        vectors,
        context,
        meta: TrainingMeta { params: params.clone(), seed },
    })
}

fn sigmoid(x: f32) -> f32 {
    if x > 6.0 {
        1.0
    } else if x < -6.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{random_walks, HeteroGraph};

    fn corpus(walks: Vec<Vec<u32>>, n: u32) -> WalkCorpus {
        WalkCorpus {
            keys: (0..n).map(NodeKey::person).collect(),
            walks,
            walk_len: 3,
            walks_per_node: 1,
            metapaths: Vec::new(),
        }
    }

    #[test]
    fn window_pairs() {
        let pairs = training_pairs(&[0, 1, 2], 1);
        assert_eq!(pairs, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        assert_eq!(pair_count(3, 1), 4);
        for len in 1..12 {
            for w in 1..5 {
                assert_eq!(pair_count(len, w), training_pairs(&vec![0; len], w).len());
            }
        }
    }

    #[test]
    fn zero_epochs_is_initialisation() {
        let c = corpus(vec![vec![0, 1, 2]], 3);
        let p = SkipGramParams { epochs: 0, dim: 4, ..Default::default() };
        let a = train_skipgram(&c, &p, 5, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init: Vec<f32> = (0..12).map(|_| (rng.random::<f32>() - 0.5) / 4.0).collect();
        assert_eq!(a.vectors, init);
        assert_eq!(a, train_skipgram(&c, &p, 5, None).unwrap());
    }

    #[test]
    fn errors() {
        let empty = corpus(vec![], 0);
        assert!(train_skipgram(&empty, &SkipGramParams::default(), 0, None).is_err());
        let c = corpus(vec![vec![0]], 1);
        assert!(train_skipgram(&c, &SkipGramParams { dim: 1, ..Default::default() }, 0, None).is_err());
        assert!(distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn distances() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
    }

    #[test]
    fn warm_start_copies_persisting_nodes() {
        let c = corpus(vec![vec![0, 1, 0, 1]], 2);
        let p = SkipGramParams { dim: 8, epochs: 2, ..Default::default() };
        let first = train_skipgram(&c, &p, 1, None).unwrap();
        let c2 = WalkCorpus { keys: vec![NodeKey::person(1), NodeKey::person(7)], walks: vec![vec![0, 1]], ..c };
        let zero = SkipGramParams { epochs: 0, ..p };
        let second = train_skipgram(&c2, &zero, 2, Some(&first)).unwrap();
        assert_eq!(second.vector(NodeKey::person(1)), first.vector(NodeKey::person(1)));
        assert_ne!(second.vector(NodeKey::person(7)), first.vector(NodeKey::person(0)));
    }

    #[test]
    fn two_cliques_separate() {
        let mut edges = Vec::new();
        for base in [0u32, 10] {
            for i in 0..10 {
                for j in i + 1..10 {
                    edges.push((NodeKey::person(base + i), NodeKey::person(base + j), 1.0));
                }
            }
        }
        edges.push((NodeKey::person(0), NodeKey::person(10), 1.0));
        let g = HeteroGraph::from_edges((0..20).map(NodeKey::person), &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_walks(&g, 20, 10, &mut rng).unwrap();
        let t = train_skipgram(&c, &SkipGramParams { dim: 16, ..Default::default() }, 4, None).unwrap();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for a in 0..20u32 {
            for b in a + 1..20 {
                let s = cosine_similarity(t.vector(NodeKey::person(a)).unwrap(), t.vector(NodeKey::person(b)).unwrap());
                if (a < 10) == (b < 10) {
                    within += s;
                    nw += 1;
                } else {
                    across += s;
                    na += 1;
                }
            }
        }
        assert!(within / nw as f64 > across / na as f64);
    }

    #[test]
    fn text_export() {
        let c = corpus(vec![vec![0, 1]], 2);
        let t = train_skipgram(&c, &SkipGramParams { dim: 2, epochs: 0, ..Default::default() }, 0, None).unwrap();
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "2 2");
        assert!(lines[1].starts_with("P0 "));
        assert_eq!(lines[2].split(' ').count(), 3);
    }
}
