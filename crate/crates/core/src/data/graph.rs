use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use prefmatch_tensor::SparseMatrix;

use crate::data::records::InteractionRecord;
use crate::error::{CoreError, Result};

/// Degree normalization scheme for the adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `1 / sqrt(deg_user * deg_item)` per edge.
    Symmetric,
    /// `1 / deg_user` per edge (row-stochastic).
    RowStochastic,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Symmetric
    }
}

/// Ordering key used to pick the "last" interaction of a user: timestamp when
/// present, then input position.
pub type EdgeOrder = (i64, usize);

/// User-item interaction graph with dense indices, a binary adjacency, and
/// its degree-normalized counterpart.
///
/// Ids map to indices by lexicographic sort, so construction is invariant to
/// the order records arrive in (up to per-edge ordering keys).
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    adjacency: Rc<SparseMatrix>,
    normalized: Rc<SparseMatrix>,
    user_items: Vec<Vec<usize>>,
    edge_order: BTreeMap<(usize, usize), EdgeOrder>,
}

impl BipartiteGraph {
    /// Deduplicate, filter to a fixpoint, and index the surviving records.
    ///
    /// Filtering drops users below `min_user_interactions` distinct items and
    /// items below `min_item_interactions` distinct users, repeating until
    /// both thresholds hold everywhere.
    pub fn build(
        records: &[InteractionRecord],
        min_user_interactions: usize,
        min_item_interactions: usize,
        normalization: Normalization,
    ) -> Result<Self> {
        if min_user_interactions < 1 || min_item_interactions < 1 {
            return Err(CoreError::Data("filter thresholds must be >= 1".into()));
        }
        // Collapse duplicate pairs, keeping the latest ordering key.
        let mut edges: BTreeMap<(&str, &str), EdgeOrder> = BTreeMap::new();
        for (pos, rec) in records.iter().enumerate() {
            let key = (rec.user_id.as_str(), rec.item_id.as_str());
            let order = (rec.timestamp.unwrap_or(i64::MIN), pos);
            let entry = edges.entry(key).or_insert(order);
            if order > *entry {
                *entry = order;
            }
        }

        let mut users: BTreeSet<&str> = edges.keys().map(|&(u, _)| u).collect();
        let mut items: BTreeSet<&str> = edges.keys().map(|&(_, i)| i).collect();
        loop {
            let mut user_deg: BTreeMap<&str, usize> = BTreeMap::new();
            let mut item_deg: BTreeMap<&str, usize> = BTreeMap::new();
            for &(u, i) in edges.keys() {
                if users.contains(u) && items.contains(i) {
                    *user_deg.entry(u).or_insert(0) += 1;
                    *item_deg.entry(i).or_insert(0) += 1;
                }
            }
            let keep_users: BTreeSet<&str> = user_deg
                .iter()
                .filter(|&(_, &d)| d >= min_user_interactions)
                .map(|(&u, _)| u)
                .collect();
            let keep_items: BTreeSet<&str> = item_deg
                .iter()
                .filter(|&(_, &d)| d >= min_item_interactions)
                .map(|(&i, _)| i)
                .collect();
            let stable = keep_users == users && keep_items == items;
            users = keep_users;
            items = keep_items;
            if stable {
                break;
            }
        }
        if users.is_empty() || items.is_empty() {
            return Err(CoreError::Data(
                "graph is empty after threshold filtering".into(),
            ));
        }

        let user_ids: Vec<String> = users.iter().map(|s| s.to_string()).collect();
        let item_ids: Vec<String> = items.iter().map(|s| s.to_string()).collect();
        let user_index: BTreeMap<&str, usize> = users.iter().enumerate().map(|(n, &u)| (u, n)).collect();
        let item_index: BTreeMap<&str, usize> = items.iter().enumerate().map(|(n, &i)| (i, n)).collect();

        let mut entries = Vec::new();
        let mut edge_order = BTreeMap::new();
        let mut user_items = vec![Vec::new(); user_ids.len()];
        for (&(u, i), &order) in &edges {
            let (Some(&ui), Some(&ii)) = (user_index.get(u), item_index.get(i)) else {
                continue;
            };
            entries.push((ui, ii, 1.0));
            edge_order.insert((ui, ii), order);
            user_items[ui].push(ii);
        }
        for list in &mut user_items {
            list.sort_unstable();
        }
        let adjacency = SparseMatrix::new(user_ids.len(), item_ids.len(), entries)
            .map_err(CoreError::Tensor)?;
        let normalized = normalize_adjacency(&adjacency, normalization)?;
        Ok(BipartiteGraph {
            user_ids,
            item_ids,
            adjacency: Rc::new(adjacency),
            normalized: Rc::new(normalized),
            user_items,
            edge_order,
        })
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }

    pub fn adjacency(&self) -> &Rc<SparseMatrix> {
        &self.adjacency
    }

    pub fn normalized(&self) -> &Rc<SparseMatrix> {
        &self.normalized
    }

    /// Items of one user, ascending.
    pub fn items_of(&self, user: usize) -> &[usize] {
        &self.user_items[user]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.entries().iter().map(|&(u, i, _)| (u, i))
    }

    /// The user's latest interaction by (timestamp, input position).
    pub fn last_interaction_of(&self, user: usize) -> Option<usize> {
        self.user_items[user]
            .iter()
            .copied()
            .max_by_key(|&item| self.edge_order[&(user, item)])
    }
}

/// Degree-normalize a binary adjacency. Errors if any row or column is empty,
/// which would make the degrees degenerate.
pub fn normalize_adjacency(
    adjacency: &SparseMatrix,
    scheme: Normalization,
) -> Result<SparseMatrix> {
    let user_deg = adjacency.row_degrees();
    let item_deg = adjacency.col_degrees();
    if user_deg.iter().any(|&d| d == 0) || item_deg.iter().any(|&d| d == 0) {
        return Err(CoreError::Data(
            "cannot normalize adjacency with a zero-degree row or column".into(),
        ));
    }
    normalize_entries(adjacency, scheme)
}

/// Normalization without the empty row/column check; degrees are taken from
/// the matrix itself, so every existing entry has nonzero endpoints.
pub(crate) fn normalize_entries(
    adjacency: &SparseMatrix,
    scheme: Normalization,
) -> Result<SparseMatrix> {
    let user_deg = adjacency.row_degrees();
    let item_deg = adjacency.col_degrees();
    let values = adjacency
        .entries()
        .iter()
        .map(|&(u, i, v)| match scheme {
            Normalization::Symmetric => v / ((user_deg[u] * item_deg[i]) as f64).sqrt(),
            Normalization::RowStochastic => v / user_deg[u] as f64,
        })
        .collect();
    adjacency.with_values(values).map_err(CoreError::Tensor)
}
