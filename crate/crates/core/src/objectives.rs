//! Predictive objectives: interaction reconstruction with sampled negatives,
//! compression terms against Gaussian priors, the cross-domain objective over
//! both item spaces, and the total loss with its warmup gate on the matching
//! term.

use prefmatch_tensor::{NodeId, Result as TensorResult, Tape, Tensor, TensorError};

use crate::matching::gaussian_kl;
use crate::identifier::GaussianNode;

/// One scored user-item pair: row indices into the latent matrices, a binary
/// label, and a weight for exact-enumeration estimators.
#[derive(Clone, Copy, Debug)]
pub struct WeightedPair {
    pub user_row: usize,
    pub item_row: usize,
    pub label: f64,
    pub weight: f64,
}

impl WeightedPair {
    pub fn positive(user_row: usize, item_row: usize) -> Self {
        WeightedPair {
            user_row,
            item_row,
            label: 1.0,
            weight: 1.0,
        }
    }

    pub fn negative(user_row: usize, item_row: usize) -> Self {
        WeightedPair {
            user_row,
            item_row,
            label: 0.0,
            weight: 1.0,
        }
    }
}

/// Interaction probability: sigmoid of the inner product of two latent rows.
pub fn score(tape: &mut Tape, z_user: NodeId, z_item: NodeId) -> TensorResult<NodeId> {
    let logits = pair_logits(
        tape,
        z_user,
        z_item,
        &[(0, 0)],
    )?;
    tape.sigmoid(logits)
}

/// Inner products for a list of (user row, item row) pairs, as an n x 1 node.
pub fn pair_logits(
    tape: &mut Tape,
    z_users: NodeId,
    z_items: NodeId,
    pairs: &[(usize, usize)],
) -> TensorResult<NodeId> {
    let u_width = tape.value(z_users).cols();
    let i_width = tape.value(z_items).cols();
    if u_width != i_width {
        return Err(TensorError::ShapeMismatch {
            op: "pair_logits",
            lhs: tape.value(z_users).shape().to_vec(),
            rhs: tape.value(z_items).shape().to_vec(),
        });
    }
    let user_idx = std::rc::Rc::new(pairs.iter().map(|&(u, _)| u).collect::<Vec<_>>());
    let item_idx = std::rc::Rc::new(pairs.iter().map(|&(_, i)| i).collect::<Vec<_>>());
    let u = tape.gather_rows(z_users, &user_idx)?;
    let v = tape.gather_rows(z_items, &item_idx)?;
    let prod = tape.mul(u, v)?;
    tape.sum_axis(prod, 1)
}

/// One block of scored pairs against a (users, items) latent pair.
pub struct PairBlock<'a> {
    pub z_users: NodeId,
    pub z_items: NodeId,
    pub pairs: &'a [WeightedPair],
}

/// Weighted mean binary cross-entropy across one or more pair blocks:
/// `sum_i w_i * bce_i / sum_i w_i`. Errors on an empty pair set.
pub fn reconstruction_loss(tape: &mut Tape, blocks: &[PairBlock]) -> TensorResult<NodeId> {
    let total_weight: f64 = blocks
        .iter()
        .flat_map(|b| b.pairs.iter())
        .map(|p| p.weight)
        .sum();
    if total_weight <= 0.0 {
        return Err(TensorError::Invalid(
            "reconstruction_loss: empty pair set".into(),
        ));
    }
    let mut weighted_sums = Vec::new();
    for block in blocks {
        if block.pairs.is_empty() {
            continue;
        }
        let index_pairs: Vec<(usize, usize)> = block
            .pairs
            .iter()
            .map(|p| (p.user_row, p.item_row))
            .collect();
        let logits = pair_logits(tape, block.z_users, block.z_items, &index_pairs)?;
        let labels = Tensor::new(
            block.pairs.len(),
            1,
            block.pairs.iter().map(|p| p.label).collect(),
        )?;
        let bce = tape.bce_with_logits(logits, &labels)?;
        let weights = Tensor::new(
            block.pairs.len(),
            1,
            block.pairs.iter().map(|p| p.weight).collect(),
        )?;
        let weights_node = tape.input(weights)?;
        let weighted = tape.mul(bce, weights_node)?;
        weighted_sums.push(tape.sum_all(weighted)?);
    }
    let mut acc = weighted_sums[0];
    for &s in &weighted_sums[1..] {
        acc = tape.add(acc, s)?;
    }
    tape.mul_scalar(acc, 1.0 / total_weight)
}

/// A standard-normal reference distribution shaped `rows x cols`.
pub fn standard_normal_node(tape: &mut Tape, rows: usize, cols: usize) -> TensorResult<GaussianNode> {
    let mean = tape.input(Tensor::zeros(rows, cols))?;
    let scale = tape.input(Tensor::full(rows, cols, 1.0))?;
    Ok(GaussianNode { mean, scale })
}

/// In-domain objective: reconstruction plus compression of the node-level
/// posteriors toward the standard normal prior.
pub struct UserVibState<'a> {
    pub blocks: Vec<PairBlock<'a>>,
    pub user_posterior: GaussianNode,
    pub item_posterior: GaussianNode,
}

pub fn user_vib_loss(
    tape: &mut Tape,
    state: &UserVibState,
    beta_user: f64,
    beta_item: f64,
) -> TensorResult<NodeId> {
    let recon = reconstruction_loss(tape, &state.blocks)?;
    let user_shape = tape.value(state.user_posterior.mean).shape();
    let item_shape = tape.value(state.item_posterior.mean).shape();
    let user_prior = standard_normal_node(tape, user_shape[0], user_shape[1])?;
    let item_prior = standard_normal_node(tape, item_shape[0], item_shape[1])?;
    let kl_user = gaussian_kl(tape, &state.user_posterior, &user_prior)?;
    let kl_item = gaussian_kl(tape, &state.item_posterior, &item_prior)?;
    let ku = tape.mul_scalar(kl_user, beta_user)?;
    let ki = tape.mul_scalar(kl_item, beta_item)?;
    let kl = tape.add(ku, ki)?;
    tape.add(recon, kl)
}

/// Cross-domain objective: reconstruction of both adjacency blocks from the
/// group-level latents plus compression toward the per-domain priors.
pub struct DomainVibState<'a> {
    pub blocks: Vec<PairBlock<'a>>,
    pub source_posterior: GaussianNode,
    pub source_prior: GaussianNode,
    pub target_posterior: GaussianNode,
    pub target_prior: GaussianNode,
}

pub fn domain_vib_loss(
    tape: &mut Tape,
    state: &DomainVibState,
    beta_source: f64,
    beta_target: f64,
) -> TensorResult<NodeId> {
    let recon = reconstruction_loss(tape, &state.blocks)?;
    let kl_source = gaussian_kl(tape, &state.source_posterior, &state.source_prior)?;
    let kl_target = gaussian_kl(tape, &state.target_posterior, &state.target_prior)?;
    let ks = tape.mul_scalar(kl_source, beta_source)?;
    let kt = tape.mul_scalar(kl_target, beta_target)?;
    let kl = tape.add(ks, kt)?;
    tape.add(recon, kl)
}

/// The four scalar terms and their sum. The reported total always includes
/// the matching term; during warmup the optimized node simply omits it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub matching: f64,
    pub domain: f64,
    pub user_source: f64,
    pub user_target: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn sum_of_parts(&self) -> f64 {
        ((self.matching + self.domain) + self.user_source) + self.user_target
    }
}

/// Combine components into the optimized scalar and the reported breakdown.
///
/// `include_matching` is false during warmup: the matching term is then held
/// out of the gradient (its parameters receive exact zeros) but still
/// reported.
pub fn total_loss(
    tape: &mut Tape,
    matching: NodeId,
    domain: NodeId,
    user_source: NodeId,
    user_target: NodeId,
    include_matching: bool,
) -> TensorResult<(NodeId, LossBreakdown)> {
    let values = [
        ("matching", tape.scalar_value(matching)),
        ("domain", tape.scalar_value(domain)),
        ("user_source", tape.scalar_value(user_source)),
        ("user_target", tape.scalar_value(user_target)),
    ];
    for (name, value) in values {
        if !value.is_finite() {
            return Err(TensorError::Invalid(format!(
                "loss component {name} is non-finite ({value})"
            )));
        }
    }
    let breakdown = LossBreakdown {
        matching: values[0].1,
        domain: values[1].1,
        user_source: values[2].1,
        user_target: values[3].1,
        total: ((values[0].1 + values[1].1) + values[2].1) + values[3].1,
    };
    let base = tape.add(domain, user_source)?;
    let base = tape.add(base, user_target)?;
    let optimized = if include_matching {
        tape.add(matching, base)?
    } else {
        base
    };
    Ok((optimized, breakdown))
}
