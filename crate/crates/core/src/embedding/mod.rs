//! Node embeddings for the observed heterogeneous graph: truncated random
//! walks (uniform or metapath-constrained and weighted) fed to skip-gram with
//! negative sampling, plus exact k-nearest-neighbor lookup.

mod graph;
mod knn;
mod skipgram;
mod walks;

pub use graph::{HeteroGraph, NodeKey, NodeType};
pub use knn::{knn, KnnIndex, KnnResult, Neighbor, VP_TREE_THRESHOLD};
pub use skipgram::{cosine_similarity, distance, train_skipgram, training_pairs, EmbeddingTable, SkipGramParams};
pub use walks::{metapath_walks, random_walks, MetaPath, WalkCorpus};
