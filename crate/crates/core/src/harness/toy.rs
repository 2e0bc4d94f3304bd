//! A fixed six-user/five-item domain pair, small enough to sweep every
//! parameter with central finite differences in seconds.

use crate::data::{
    make_splits, BipartiteGraph, DomainPair, InteractionRecord, Normalization, SplitOptions,
};
use crate::error::Result;
use crate::harness::config::{ConfigFile, DataSection, ModelSection, TrainSection, Variant};

fn graph(prefix: &str, edges: &[(usize, usize)]) -> Result<BipartiteGraph> {
    let records: Vec<InteractionRecord> = edges
        .iter()
        .enumerate()
        .map(|(pos, &(u, i))| InteractionRecord {
            user_id: format!("{prefix}u{u}"),
            item_id: format!("{prefix}i{i}"),
            timestamp: Some(pos as i64),
        })
        .collect();
    BipartiteGraph::build(&records, 1, 1, Normalization::Symmetric)
}

/// Deterministic toy pair: 6 users and 5 items per domain, 4 shared
/// identities, two of which are held out for evaluation.
pub fn toy_pair(seed: u64) -> Result<DomainPair> {
    let source = graph(
        "s",
        &[
            (0, 0),
            (0, 1),
            (1, 0),
            (1, 2),
            (2, 1),
            (2, 2),
            (2, 3),
            (3, 3),
            (3, 4),
            (4, 0),
            (4, 4),
            (5, 2),
            (5, 3),
        ],
    )?;
    let target = graph(
        "t",
        &[
            (0, 1),
            (0, 2),
            (1, 0),
            (1, 3),
            (2, 0),
            (2, 1),
            (2, 4),
            (3, 2),
            (3, 4),
            (4, 1),
            (4, 3),
            (5, 0),
            (5, 2),
        ],
    )?;
    let overlap = vec![(0, 0), (1, 1), (2, 2), (3, 3)];
    make_splits(
        source,
        target,
        &overlap,
        SplitOptions {
            overlap_fraction: 0.0,
            eval_fraction: 0.2,
            normalization: Normalization::Symmetric,
        },
        seed,
    )
}

/// Configuration matching the toy pair: width 4, two layers, two heads,
/// groups of four, exact reconstruction, no dropout.
pub fn toy_config() -> ConfigFile {
    ConfigFile {
        data: DataSection::default(),
        model: ModelSection {
            embed_dim: 4,
            layers: 2,
            heads: 2,
            ..ModelSection::default()
        },
        train: TrainSection {
            epochs: 5,
            warmup_epochs: 0,
            batch_size: 64,
            group_size: 4,
            negatives: 2,
            dropout: 0.0,
            exact_reconstruction: true,
            ..TrainSection::default()
        },
        eval: Default::default(),
        ablation: Variant::Full,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_pair_is_well_formed() {
        let pair = toy_pair(1).unwrap();
        assert_eq!(pair.source.graph.user_count(), 6);
        assert_eq!(pair.source.graph.item_count(), 5);
        assert_eq!(pair.validation.len() + pair.test.len(), 2);
        // Four users retain training edges in each domain.
        assert_eq!(pair.source.trainable_users().len(), 4);
        assert_eq!(pair.target.trainable_users().len(), 4);
    }
}
