use std::collections::BTreeSet;
use std::rc::Rc;

use prefmatch_tensor::{SparseMatrix, StreamRng};
use serde::Serialize;

use crate::data::graph::{normalize_entries, BipartiteGraph, Normalization};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// A user identity present in both domains, with its split assignment.
#[derive(Clone, Debug)]
pub struct OverlapPair {
    pub source_user: usize,
    pub target_user: usize,
    pub split: Split,
}

/// One cold-start ranking case: the user's source-side history is visible,
/// and exactly one held-out target item is the ground truth.
#[derive(Clone, Debug)]
pub struct EvalInstance {
    pub source_user: usize,
    pub target_user: usize,
    pub source_history: Vec<usize>,
    pub held_out_item: usize,
    /// Target items this user interacted with in training; removed from the
    /// ranked candidate pool.
    pub excluded_items: BTreeSet<usize>,
}

/// One domain of a pair: the full graph plus training-only adjacencies.
///
/// Evaluation users' edges are excluded from the training matrices; the full
/// normalized adjacency stays available for computing source-side
/// representations at test time.
#[derive(Clone, Debug)]
pub struct DomainSide {
    pub graph: BipartiteGraph,
    pub train_edges: Vec<(usize, usize)>,
    pub train_adjacency: Rc<SparseMatrix>,
    pub train_normalized: Rc<SparseMatrix>,
    pub train_user_items: Vec<BTreeSet<usize>>,
}

impl DomainSide {
    fn from_edges(
        graph: BipartiteGraph,
        train_edges: Vec<(usize, usize)>,
        normalization: Normalization,
    ) -> Result<Self> {
        let entries = train_edges.iter().map(|&(u, i)| (u, i, 1.0)).collect();
        let train_adjacency =
            SparseMatrix::new(graph.user_count(), graph.item_count(), entries)
                .map_err(CoreError::Tensor)?;
        let train_normalized = normalize_entries(&train_adjacency, normalization)?;
        let mut train_user_items = vec![BTreeSet::new(); graph.user_count()];
        for &(u, i) in &train_edges {
            train_user_items[u].insert(i);
        }
        Ok(DomainSide {
            graph,
            train_edges,
            train_adjacency: Rc::new(train_adjacency),
            train_normalized: Rc::new(train_normalized),
            train_user_items,
        })
    }

    /// Users with at least one training edge.
    pub fn trainable_users(&self) -> Vec<usize> {
        self.train_user_items
            .iter()
            .enumerate()
            .filter(|(_, items)| !items.is_empty())
            .map(|(u, _)| u)
            .collect()
    }
}

/// A source-target domain pair with its split protocol applied.
#[derive(Clone, Debug)]
pub struct DomainPair {
    pub source: DomainSide,
    pub target: DomainSide,
    pub overlap: Vec<OverlapPair>,
    pub validation: Vec<EvalInstance>,
    pub test: Vec<EvalInstance>,
    pub strict_nocdr: bool,
    pub seed: u64,
}

impl DomainPair {
    /// Identity pairs usable during training: empty under strict
    /// non-overlapping configuration, where identities exist for evaluation
    /// only.
    pub fn train_overlap(&self) -> Vec<&OverlapPair> {
        if self.strict_nocdr {
            return Vec::new();
        }
        self.overlap
            .iter()
            .filter(|p| p.split == Split::Train)
            .collect()
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            overlap_users: self
                .overlap
                .iter()
                .map(|p| (p.source_user, p.target_user))
                .collect(),
            val_users: self.validation.iter().map(|e| e.source_user).collect(),
            test_users: self.test.iter().map(|e| e.source_user).collect(),
            held_out_edges: self
                .validation
                .iter()
                .chain(&self.test)
                .map(|e| (e.target_user, e.held_out_item))
                .collect(),
        }
    }
}

/// JSON manifest describing a split, for reproducibility audits.
#[derive(Debug, Serialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub overlap_users: Vec<(usize, usize)>,
    pub val_users: Vec<usize>,
    pub test_users: Vec<usize>,
    pub held_out_edges: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug)]
pub struct SplitOptions {
    /// Fraction of non-evaluation identity pairs whose link stays visible to
    /// training. Zero means strict non-overlapping training.
    pub overlap_fraction: f64,
    /// Fraction of identity pairs held out for validation + test.
    pub eval_fraction: f64,
    pub normalization: Normalization,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            overlap_fraction: 0.0,
            eval_fraction: 0.2,
            normalization: Normalization::Symmetric,
        }
    }
}

/// Assign identity pairs to train/validation/test and carve the training
/// adjacencies.
///
/// Evaluation users lose all their target-domain edges and their
/// source-domain edges from training; the held-out ground truth is the last
/// target interaction by timestamp, falling back to input order. Validation
/// and test take half of the evaluation pool each, deterministically in the
/// seed.
pub fn make_splits(
    source: BipartiteGraph,
    target: BipartiteGraph,
    overlap: &[(usize, usize)],
    options: SplitOptions,
    seed: u64,
) -> Result<DomainPair> {
    if !(0.0..=1.0).contains(&options.overlap_fraction) {
        return Err(CoreError::Config("overlap_fraction must be in [0, 1]".into()));
    }
    if !(options.eval_fraction > 0.0 && options.eval_fraction < 1.0) {
        return Err(CoreError::Config("eval_fraction must be in (0, 1)".into()));
    }
    if overlap.len() < 2 {
        return Err(CoreError::Data(format!(
            "need at least 2 overlapping users to form validation/test splits, got {}",
            overlap.len()
        )));
    }
    for &(su, tu) in overlap {
        if su >= source.user_count() || tu >= target.user_count() {
            return Err(CoreError::Data(format!(
                "overlap pair ({su}, {tu}) out of range"
            )));
        }
    }

    let mut rng = StreamRng::new(seed).stream("splits");
    let mut order: Vec<usize> = (0..overlap.len()).collect();
    shuffle(&mut order, &mut rng);

    let n_eval = ((overlap.len() as f64 * options.eval_fraction).round() as usize)
        .clamp(2, overlap.len());
    let n_val = n_eval / 2;
    let n_train_linked = (((overlap.len() - n_eval) as f64) * options.overlap_fraction).round()
        as usize;

    let mut pairs: Vec<OverlapPair> = Vec::with_capacity(overlap.len());
    for (rank, &slot) in order.iter().enumerate() {
        let (source_user, target_user) = overlap[slot];
        let split = if rank < n_val {
            Split::Validation
        } else if rank < n_eval {
            Split::Test
        } else {
            Split::Train
        };
        pairs.push(OverlapPair {
            source_user,
            target_user,
            split,
        });
    }
    // Under partial overlap only the first n_train_linked train pairs keep a
    // visible link; the rest behave as unrelated users.
    let strict_nocdr = options.overlap_fraction == 0.0;
    if !strict_nocdr {
        let mut kept = 0;
        pairs.retain(|p| {
            if p.split != Split::Train {
                return true;
            }
            kept += 1;
            kept <= n_train_linked
        });
    }

    let eval_source_users: BTreeSet<usize> = pairs
        .iter()
        .filter(|p| p.split != Split::Train)
        .map(|p| p.source_user)
        .collect();
    let eval_target_users: BTreeSet<usize> = pairs
        .iter()
        .filter(|p| p.split != Split::Train)
        .map(|p| p.target_user)
        .collect();

    let source_train_edges: Vec<(usize, usize)> = source
        .edges()
        .filter(|(u, _)| !eval_source_users.contains(u))
        .collect();
    let target_train_edges: Vec<(usize, usize)> = target
        .edges()
        .filter(|(u, _)| !eval_target_users.contains(u))
        .collect();
    if source_train_edges.is_empty() || target_train_edges.is_empty() {
        return Err(CoreError::Data(
            "no training edges left after removing evaluation users".into(),
        ));
    }

    let mut validation = Vec::new();
    let mut test = Vec::new();
    let source_side = DomainSide::from_edges(source, source_train_edges, options.normalization)?;
    let target_side = DomainSide::from_edges(target, target_train_edges, options.normalization)?;
    for pair in &pairs {
        if pair.split == Split::Train {
            continue;
        }
        let held_out = target_side
            .graph
            .last_interaction_of(pair.target_user)
            .ok_or_else(|| {
                CoreError::Data(format!(
                    "evaluation user {} has no target-domain edge to hold out",
                    pair.target_user
                ))
            })?;
        let excluded = target_side.train_user_items[pair.target_user].clone();
        debug_assert!(!excluded.contains(&held_out));
        let instance = EvalInstance {
            source_user: pair.source_user,
            target_user: pair.target_user,
            source_history: source_side.graph.items_of(pair.source_user).to_vec(),
            held_out_item: held_out,
            excluded_items: excluded,
        };
        match pair.split {
            Split::Validation => validation.push(instance),
            Split::Test => test.push(instance),
            Split::Train => unreachable!(),
        }
    }

    Ok(DomainPair {
        source: source_side,
        target: target_side,
        overlap: pairs,
        validation,
        test,
        strict_nocdr,
        seed,
    })
}

fn shuffle(order: &mut [usize], rng: &mut impl rand::Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records::InteractionRecord;

    fn grid_graph(prefix: &str, users: usize, items: usize) -> BipartiteGraph {
        let mut records = Vec::new();
        for u in 0..users {
            for i in 0..items {
                if (u + i) % 2 == 0 || i == 0 {
                    records.push(InteractionRecord {
                        user_id: format!("{prefix}u{u:02}"),
                        item_id: format!("{prefix}i{i:02}"),
                        timestamp: Some((u * items + i) as i64),
                    });
                }
            }
        }
        BipartiteGraph::build(&records, 1, 1, Normalization::Symmetric).unwrap()
    }

    fn pair_of(seed: u64, overlap_fraction: f64) -> DomainPair {
        let source = grid_graph("s", 12, 8);
        let target = grid_graph("t", 12, 8);
        let overlap: Vec<(usize, usize)> = (0..10).map(|k| (k, k)).collect();
        make_splits(
            source,
            target,
            &overlap,
            SplitOptions {
                overlap_fraction,
                eval_fraction: 0.2,
                normalization: Normalization::Symmetric,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn twenty_percent_of_ten_gives_one_val_one_test() {
        let pair = pair_of(1, 0.0);
        assert_eq!(pair.validation.len(), 1);
        assert_eq!(pair.test.len(), 1);
    }

    #[test]
    fn strict_nocdr_has_no_train_links_but_eval_works() {
        let pair = pair_of(2, 0.0);
        assert!(pair.strict_nocdr);
        assert!(pair.train_overlap().is_empty());
        for inst in pair.validation.iter().chain(&pair.test) {
            assert!(!inst.source_history.is_empty());
            assert!(!inst.excluded_items.contains(&inst.held_out_item));
        }
        // Evaluation users appear in the overlap map with their split.
        for inst in &pair.test {
            assert!(pair
                .overlap
                .iter()
                .any(|p| p.source_user == inst.source_user && p.split == Split::Test));
        }
    }

    #[test]
    fn same_seed_same_split() {
        let a = pair_of(5, 0.0);
        let b = pair_of(5, 0.0);
        let ids = |p: &DomainPair| {
            (
                p.validation.iter().map(|e| e.source_user).collect::<Vec<_>>(),
                p.test.iter().map(|e| e.source_user).collect::<Vec<_>>(),
            )
        };
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(a.source.train_edges, b.source.train_edges);
    }

    #[test]
    fn held_out_edges_absent_from_training() {
        for seed in 0..5 {
            let pair = pair_of(seed, 0.0);
            for inst in pair.validation.iter().chain(&pair.test) {
                for &(u, i) in &pair.target.train_edges {
                    assert!(
                        !(u == inst.target_user && i == inst.held_out_item),
                        "held-out edge leaked into training"
                    );
                }
                // The whole evaluation user is cold in the target domain.
                assert!(pair.target.train_user_items[inst.target_user].is_empty());
                // And its source edges are excluded from source training.
                assert!(pair.source.train_user_items[inst.source_user].is_empty());
            }
        }
    }

    #[test]
    fn partial_overlap_keeps_some_train_links() {
        let pair = pair_of(3, 0.5);
        assert!(!pair.strict_nocdr);
        assert_eq!(pair.train_overlap().len(), 4); // half of the 8 non-eval pairs
    }

    #[test]
    fn too_few_overlap_users_error() {
        let source = grid_graph("s", 4, 4);
        let target = grid_graph("t", 4, 4);
        let err = make_splits(source, target, &[(0, 0)], SplitOptions::default(), 1).unwrap_err();
        assert!(err.to_string().contains("at least 2"));
    }

    #[test]
    fn manifest_lists_held_out_edges() {
        let pair = pair_of(4, 0.0);
        let manifest = pair.manifest();
        assert_eq!(manifest.seed, 4);
        assert_eq!(
            manifest.held_out_edges.len(),
            pair.validation.len() + pair.test.len()
        );
        let json = serde_json::to_string(&manifest).unwrap();
        assert!(json.contains("\"seed\":4"));
    }
}
