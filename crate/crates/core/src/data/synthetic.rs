use rand::Rng;

use prefmatch_tensor::StreamRng;

use crate::data::graph::{BipartiteGraph, Normalization};
use crate::data::records::InteractionRecord;
use crate::error::{CoreError, Result};

/// Configuration for the synthetic cross-domain pair generator.
///
/// Users and items carry latent cluster labels; a user interacts with an item
/// with probability `noise + affinity` when their clusters match and `noise`
/// otherwise. Cluster labels are shared across domains, and the first
/// `overlap_users` users of each domain are the same identities (same cluster
/// draw), so a domain-invariant preference signal exists by construction.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub users_per_domain: usize,
    pub items_per_domain: usize,
    pub clusters: usize,
    pub affinity: f64,
    pub noise: f64,
    /// Number of shared identities across the two domains.
    #[serde(default = "default_overlap")]
    pub overlap_users: usize,
    /// Relative user-cluster frequencies; defaults to a decaying profile so
    /// clusters are statistically distinguishable. Item clusters stay uniform.
    #[serde(default)]
    pub cluster_weights: Option<Vec<f64>>,
    pub seed: u64,
}

fn default_overlap() -> usize {
    0
}

impl SyntheticConfig {
    pub fn effective_overlap(&self) -> usize {
        if self.overlap_users == 0 {
            (self.users_per_domain * 2) / 5
        } else {
            self.overlap_users
        }
    }

    fn weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = match &self.cluster_weights {
            Some(w) => w.clone(),
            None => (0..self.clusters).map(|c| 0.75f64.powi(c as i32)).collect(),
        };
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }
}

/// Generated pair: graphs, identity map, and ground-truth cluster labels.
#[derive(Debug)]
pub struct SyntheticPair {
    pub source: BipartiteGraph,
    pub target: BipartiteGraph,
    /// (source user index, target user index) identity pairs.
    pub overlap: Vec<(usize, usize)>,
    pub source_user_clusters: Vec<usize>,
    pub target_user_clusters: Vec<usize>,
    pub source_item_clusters: Vec<usize>,
    pub target_item_clusters: Vec<usize>,
    pub source_records: Vec<InteractionRecord>,
    pub target_records: Vec<InteractionRecord>,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticPair> {
    if config.clusters < 2 {
        return Err(CoreError::Config("cluster count must be >= 2".into()));
    }
    if !(config.affinity > 0.0 && config.affinity <= 1.0) && config.affinity != 0.0 {
        return Err(CoreError::Config("affinity must be in [0, 1]".into()));
    }
    if !(0.0..1.0).contains(&config.noise) {
        return Err(CoreError::Config("noise must be in [0, 1)".into()));
    }
    if let Some(w) = &config.cluster_weights {
        if w.len() != config.clusters || w.iter().any(|&x| x <= 0.0) {
            return Err(CoreError::Config(
                "cluster_weights must be positive with one weight per cluster".into(),
            ));
        }
    }
    let overlap_users = config.effective_overlap();
    if overlap_users > config.users_per_domain {
        return Err(CoreError::Config(
            "overlap_users cannot exceed users_per_domain".into(),
        ));
    }

    // Expected degrees under uniform item clusters.
    let match_rate = 1.0 / config.clusters as f64;
    let edge_rate = config.noise + config.affinity * match_rate;
    let expected_user_degree = config.items_per_domain as f64 * edge_rate;
    let expected_item_degree = config.users_per_domain as f64 * edge_rate;
    if expected_user_degree < 5.0 || expected_item_degree < 10.0 {
        return Err(CoreError::Config(format!(
            "expected degrees too low for the default interaction filters \
             (user {expected_user_degree:.1} < 5 or item {expected_item_degree:.1} < 10); \
             increase items/users, affinity, or noise"
        )));
    }

    let streams = StreamRng::new(config.seed);
    let weights = config.weights();
    let mut cluster_rng = streams.stream("init");
    let draw_cluster = |rng: &mut rand_chacha::ChaCha8Rng| -> usize {
        let x: f64 = rng.random();
        let mut acc = 0.0;
        for (c, &w) in weights.iter().enumerate() {
            acc += w;
            if x < acc {
                return c;
            }
        }
        weights.len() - 1
    };

    // Shared identities draw one cluster; remaining users draw independently.
    let mut source_user_clusters = Vec::with_capacity(config.users_per_domain);
    let mut target_user_clusters = Vec::with_capacity(config.users_per_domain);
    for _ in 0..overlap_users {
        let c = draw_cluster(&mut cluster_rng);
        source_user_clusters.push(c);
        target_user_clusters.push(c);
    }
    for _ in overlap_users..config.users_per_domain {
        source_user_clusters.push(draw_cluster(&mut cluster_rng));
    }
    for _ in overlap_users..config.users_per_domain {
        target_user_clusters.push(draw_cluster(&mut cluster_rng));
    }
    let source_item_clusters: Vec<usize> = (0..config.items_per_domain)
        .map(|_| cluster_rng.random_range(0..config.clusters))
        .collect();
    let target_item_clusters: Vec<usize> = (0..config.items_per_domain)
        .map(|_| cluster_rng.random_range(0..config.clusters))
        .collect();

    let build_domain = |prefix: &str,
                        user_clusters: &[usize],
                        item_clusters: &[usize],
                        stream: &str|
     -> Result<(BipartiteGraph, Vec<InteractionRecord>)> {
        let mut rng = streams.stream(stream);
        let mut records = Vec::new();
        let mut user_degree = vec![0usize; user_clusters.len()];
        let mut item_degree = vec![0usize; item_clusters.len()];
        let mut ts = 0i64;
        for (u, &uc) in user_clusters.iter().enumerate() {
            for (i, &ic) in item_clusters.iter().enumerate() {
                let p = config.noise + if uc == ic { config.affinity } else { 0.0 };
                if rng.random::<f64>() < p {
                    records.push(InteractionRecord {
                        user_id: format!("{prefix}u{u:05}"),
                        item_id: format!("{prefix}i{i:05}"),
                        timestamp: Some(ts),
                    });
                    ts += 1;
                    user_degree[u] += 1;
                    item_degree[i] += 1;
                }
            }
        }
        // Degree floor: isolated nodes get one same-cluster edge (or any edge
        // if no same-cluster partner exists) so graph construction holds.
        for (u, &uc) in user_clusters.iter().enumerate() {
            if user_degree[u] > 0 {
                continue;
            }
            let matching: Vec<usize> = item_clusters
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c == uc)
                .map(|(i, _)| i)
                .collect();
            let i = if matching.is_empty() {
                rng.random_range(0..item_clusters.len())
            } else {
                matching[rng.random_range(0..matching.len())]
            };
            records.push(InteractionRecord {
                user_id: format!("{prefix}u{u:05}"),
                item_id: format!("{prefix}i{i:05}"),
                timestamp: Some(ts),
            });
            ts += 1;
            user_degree[u] += 1;
            item_degree[i] += 1;
        }
        for (i, &ic) in item_clusters.iter().enumerate() {
            if item_degree[i] > 0 {
                continue;
            }
            let matching: Vec<usize> = user_clusters
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c == ic)
                .map(|(u, _)| u)
                .collect();
            let u = if matching.is_empty() {
                rng.random_range(0..user_clusters.len())
            } else {
                matching[rng.random_range(0..matching.len())]
            };
            records.push(InteractionRecord {
                user_id: format!("{prefix}u{u:05}"),
                item_id: format!("{prefix}i{i:05}"),
                timestamp: Some(ts),
            });
            ts += 1;
            item_degree[i] += 1;
        }
        // Thresholds of 1 keep every node; zero-padded ids sort in index order.
        let graph = BipartiteGraph::build(&records, 1, 1, Normalization::Symmetric)?;
        debug_assert_eq!(graph.user_count(), user_clusters.len());
        debug_assert_eq!(graph.item_count(), item_clusters.len());
        Ok((graph, records))
    };

    let (source, source_records) = build_domain(
        "s",
        &source_user_clusters,
        &source_item_clusters,
        "sampling",
    )?;
    let (target, target_records) = build_domain(
        "t",
        &target_user_clusters,
        &target_item_clusters,
        "negatives",
    )?;
    let overlap = (0..overlap_users).map(|k| (k, k)).collect();

    Ok(SyntheticPair {
        source,
        target,
        overlap,
        source_user_clusters,
        target_user_clusters,
        source_item_clusters,
        target_item_clusters,
        source_records,
        target_records,
    })
}
