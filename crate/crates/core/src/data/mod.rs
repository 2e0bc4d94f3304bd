//! Interaction ingestion, bipartite graph construction, cold-start splits,
//! negative sampling, and the synthetic cross-domain generator.

mod graph;
mod negative;
mod records;
mod splits;
mod synthetic;

pub use graph::{normalize_adjacency, BipartiteGraph, Normalization};
pub use negative::sample_negatives;
pub use records::{load_interactions, InteractionRecord, LoadedInteractions};
pub use splits::{
    make_splits, DomainPair, DomainSide, EvalInstance, OverlapPair, Split, SplitManifest,
    SplitOptions,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticPair};
