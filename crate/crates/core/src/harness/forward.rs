//! One training-step forward pass: encode both domains, run the node-level
//! objective on an edge minibatch, the group-level objective on freshly drawn
//! user groups, and the matching term, all on a single tape.
//!
//! Every random draw is keyed by `(seed, stream, step, slot)`, so a fixed
//! step replays bit-identically; the finite-difference checker relies on
//! this.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use prefmatch_tensor::{Mode, NodeId, StreamRng, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_negatives, DomainPair, DomainSide};
use crate::encoder::{encode, EncodedNodes, EncoderConfig};
use crate::error::{CoreError, Result};
use crate::harness::config::{ConfigFile, Variant};
use crate::identifier::{
    infer_level1, infer_level2, noise_like, sample, sample_group, GaussianNode, Level1Config,
    NodeKind, SCALE_FLOOR,
};
use crate::matching::{
    driven_representation, matching_loss, predictive_distribution, InvariantPreference, View,
};
use crate::model::{EncoderParams, ModelParams};
use crate::objectives::{
    domain_vib_loss, reconstruction_loss, standard_normal_node, total_loss, user_vib_loss,
    DomainVibState, LossBreakdown, PairBlock, UserVibState, WeightedPair,
};

const SAMPLING_SLOTS: u64 = 16;
const NEGATIVE_SLOTS: u64 = 4;

#[derive(Clone, Copy, Debug)]
pub struct ForwardSettings {
    pub include_matching: bool,
    pub step: u64,
    pub seed: u64,
    pub dropout: f64,
    /// False takes posterior means everywhere instead of reparameterized
    /// draws.
    pub sample_latents: bool,
}

pub struct StepBatches<'a> {
    pub source: &'a [(usize, usize)],
    pub target: &'a [(usize, usize)],
}

/// Local row layout for one batch path: which graph rows were gathered and
/// the scored pairs in local coordinates.
struct BatchPlan {
    user_rows: Vec<usize>,
    item_rows: Vec<usize>,
    pairs: Vec<WeightedPair>,
}

fn plan_user_batch(
    side: &DomainSide,
    batch: &[(usize, usize)],
    negatives: usize,
    exact: bool,
    rng: &mut ChaCha8Rng,
) -> Result<BatchPlan> {
    if exact {
        return plan_exact_batch(side, negatives);
    }
    let mut user_rows: Vec<usize> = batch.iter().map(|&(u, _)| u).collect();
    user_rows.sort_unstable();
    user_rows.dedup();
    let user_local: BTreeMap<usize, usize> =
        user_rows.iter().enumerate().map(|(l, &u)| (u, l)).collect();

    let item_count = side.graph.item_count();
    let mut raw: Vec<(usize, usize, f64)> = Vec::new();
    for &(u, v) in batch {
        raw.push((u, v, 1.0));
        let negs = sample_negatives(&side.train_user_items[u], item_count, negatives, rng)?;
        for n in negs {
            raw.push((u, n, 0.0));
        }
    }
    let mut item_rows: Vec<usize> = raw.iter().map(|&(_, v, _)| v).collect();
    item_rows.sort_unstable();
    item_rows.dedup();
    let item_local: BTreeMap<usize, usize> =
        item_rows.iter().enumerate().map(|(l, &v)| (v, l)).collect();
    let pairs = raw
        .into_iter()
        .map(|(u, v, label)| WeightedPair {
            user_row: user_local[&u],
            item_row: item_local[&v],
            label,
            weight: 1.0,
        })
        .collect();
    Ok(BatchPlan {
        user_rows,
        item_rows,
        pairs,
    })
}

/// Full enumeration over every trainable user and every item. Non-edges carry
/// weight `negatives * degree(u) / #non_edges(u)`, which makes the sampled
/// estimator unbiased for this loss.
fn plan_exact_batch(side: &DomainSide, negatives: usize) -> Result<BatchPlan> {
    let item_count = side.graph.item_count();
    let user_rows = side.trainable_users();
    let item_rows: Vec<usize> = (0..item_count).collect();
    let user_local: BTreeMap<usize, usize> =
        user_rows.iter().enumerate().map(|(l, &u)| (u, l)).collect();
    let mut pairs = Vec::new();
    for &u in &user_rows {
        let positives = &side.train_user_items[u];
        let degree = positives.len();
        let non_edges = item_count - degree;
        if non_edges == 0 {
            return Err(CoreError::Data(format!(
                "user {u} has interacted with every item; exact loss undefined"
            )));
        }
        let neg_weight = negatives as f64 * degree as f64 / non_edges as f64;
        for v in 0..item_count {
            let positive = positives.contains(&v);
            pairs.push(WeightedPair {
                user_row: user_local[&u],
                item_row: v,
                label: if positive { 1.0 } else { 0.0 },
                weight: if positive { 1.0 } else { neg_weight },
            });
        }
    }
    Ok(BatchPlan {
        user_rows,
        item_rows,
        pairs,
    })
}

/// Latents for one domain's edge-batch path.
struct BatchLatents {
    z_users: NodeId,
    z_items: NodeId,
    user_posterior: Option<GaussianNode>,
    item_posterior: Option<GaussianNode>,
}

/// Group-level path for one domain.
struct GroupPath {
    group: Vec<usize>,
    z1: NodeId,
    posterior: GaussianNode,
    z2: NodeId,
}

/// Raw cross-domain pair before item-local remapping.
struct RawDomainPair {
    user_local: usize,
    /// 0 = source items, 1 = target items.
    item_domain: usize,
    item: usize,
    label: f64,
    weight: f64,
}

pub struct ForwardOutcome<'m> {
    pub tape: Tape<'m>,
    pub optimized: NodeId,
    pub breakdown: LossBreakdown,
}

pub fn forward_step<'m>(
    model: &ModelParams,
    store: &'m prefmatch_tensor::ParamStore,
    pair: &DomainPair,
    batches: &StepBatches,
    config: &ConfigFile,
    settings: &ForwardSettings,
) -> Result<ForwardOutcome<'m>> {
    let streams = StreamRng::new(settings.seed);
    let variant = config.ablation;
    let step = settings.step;
    let mode = Mode::Train {
        dropout: settings.dropout,
        rng: streams.stream_at("dropout", step),
    };
    let mut tape = Tape::new(store, mode);

    let encoder_config = EncoderConfig {
        layers: model.dims.layers,
        reaggregate_per_layer: config.model.reaggregate_per_layer,
    };
    let level1 = Level1Config {
        activation: config.model.sigma1_activation,
        scale_multiplier: config.model.sigma1_scale,
    };
    let betas = config.betas();

    let sides: [(&DomainSide, &EncoderParams); 2] = [
        (&pair.source, &model.source_encoder),
        (&pair.target, &model.target_encoder),
    ];
    let domain_batches: [&[(usize, usize)]; 2] = [batches.source, batches.target];

    let mut encoded: Vec<EncodedNodes> = Vec::with_capacity(2);
    for (side, enc) in sides {
        encoded.push(encode(&mut tape, &side.train_normalized, enc, &encoder_config)?);
    }

    let sampling_at = |slot: u64| streams.stream_at("sampling", step * SAMPLING_SLOTS + slot);
    let negatives_at = |slot: u64| streams.stream_at("negatives", step * NEGATIVE_SLOTS + slot);

    // Edge-batch path per domain.
    let mut user_losses: Vec<NodeId> = Vec::with_capacity(2);
    if variant.uses_user_objective() {
        for dom in 0..2 {
            let side = sides[dom].0;
            let mut neg_rng = negatives_at(dom as u64);
            let plan = plan_user_batch(
                side,
                domain_batches[dom],
                config.train.negatives,
                config.train.exact_reconstruction,
                &mut neg_rng,
            )?;
            let latents = batch_latents(
                &mut tape,
                model,
                &encoded[dom],
                &plan,
                &level1,
                variant,
                settings,
                &mut sampling_at(dom as u64),
                &mut sampling_at(2 + dom as u64),
            )?;
            let block = PairBlock {
                z_users: latents.z_users,
                z_items: latents.z_items,
                pairs: &plan.pairs,
            };
            let loss = match (&latents.user_posterior, &latents.item_posterior) {
                (Some(user_posterior), Some(item_posterior)) => {
                    let state = UserVibState {
                        blocks: vec![block],
                        user_posterior: *user_posterior,
                        item_posterior: *item_posterior,
                    };
                    let (bu, bi) = if dom == 0 {
                        (betas[0], betas[1])
                    } else {
                        (betas[2], betas[3])
                    };
                    user_vib_loss(&mut tape, &state, bu, bi)?
                }
                _ => reconstruction_loss(&mut tape, &[block])?,
            };
            user_losses.push(loss);
        }
    } else {
        for _ in 0..2 {
            user_losses.push(tape.input(Tensor::scalar(0.0))?);
        }
    }

    // Group path and the cross-domain/matching terms.
    let (domain_loss, matching_term) = if variant.uses_group_path() {
        let mut groups: Vec<GroupPath> = Vec::with_capacity(2);
        for dom in 0..2 {
            let side = sides[dom].0;
            groups.push(group_path(
                &mut tape,
                model,
                &encoded[dom],
                side,
                config.train.group_size,
                &level1,
                settings,
                &mut sampling_at(4 + dom as u64),
                &mut sampling_at(6 + dom as u64),
                &mut sampling_at(8 + dom as u64),
            )?);
        }

        let domain_loss = if variant.uses_domain_objective() {
            let mut raw: Vec<Vec<RawDomainPair>> = vec![Vec::new(), Vec::new()];
            for dom in 0..2 {
                let mut shuffle_rng = sampling_at(12 + dom as u64);
                let mut neg_rng = negatives_at(2 + dom as u64);
                raw[dom] = plan_domain_pairs(
                    sides[dom].0,
                    sides[1 - dom].0,
                    dom,
                    &groups[dom].group,
                    config.train.batch_size,
                    config.train.negatives,
                    config.train.exact_reconstruction,
                    &mut shuffle_rng,
                    &mut neg_rng,
                )?;
            }

            // Gather, sample, and project the touched item latents per domain.
            let mut touched: [BTreeSet<usize>; 2] = [BTreeSet::new(), BTreeSet::new()];
            for pairs in &raw {
                for p in pairs {
                    touched[p.item_domain].insert(p.item);
                }
            }
            let mut projected: Vec<Option<NodeId>> = vec![None, None];
            let mut item_local: Vec<BTreeMap<usize, usize>> =
                vec![BTreeMap::new(), BTreeMap::new()];
            for dom in 0..2 {
                if touched[dom].is_empty() {
                    continue;
                }
                let rows: Vec<usize> = touched[dom].iter().copied().collect();
                item_local[dom] = rows.iter().enumerate().map(|(l, &v)| (v, l)).collect();
                let idx = Rc::new(rows);
                let gathered = tape.gather_rows(encoded[dom].items, &idx)?;
                let posterior =
                    infer_level1(&mut tape, gathered, &model.identifier, NodeKind::Item, &level1)?;
                let eps = settings
                    .sample_latents
                    .then(|| noise_like(&tape, &posterior, &mut sampling_at(10 + dom as u64)));
                let z1 = sample(&mut tape, &posterior, eps)?;
                projected[dom] = Some(model.item_projection.apply(&mut tape, z1)?);
            }

            // Four blocks: each group against each domain's items.
            let mut block_pairs: [[Vec<WeightedPair>; 2]; 2] =
                [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
            for dom in 0..2 {
                for p in &raw[dom] {
                    block_pairs[dom][p.item_domain].push(WeightedPair {
                        user_row: p.user_local,
                        item_row: item_local[p.item_domain][&p.item],
                        label: p.label,
                        weight: p.weight,
                    });
                }
            }
            let mut blocks = Vec::new();
            for dom in 0..2 {
                for item_dom in 0..2 {
                    if block_pairs[dom][item_dom].is_empty() {
                        continue;
                    }
                    blocks.push(PairBlock {
                        z_users: groups[dom].z2,
                        z_items: projected[item_dom].expect("touched items were projected"),
                        pairs: &block_pairs[dom][item_dom],
                    });
                }
            }

            let source_prior = level2_prior(&mut tape, model, &groups[0])?;
            let target_prior = level2_prior(&mut tape, model, &groups[1])?;
            let state = DomainVibState {
                blocks,
                source_posterior: groups[0].posterior,
                source_prior,
                target_posterior: groups[1].posterior,
                target_prior,
            };
            domain_vib_loss(&mut tape, &state, betas[4], betas[5])?
        } else {
            tape.input(Tensor::scalar(0.0))?
        };

        let matching_term = if variant.uses_matching() {
            let r_source = driven_representation(
                &mut tape,
                groups[0].z2,
                groups[1].z2,
                View::Source,
                &model.matching,
            )?;
            let r_target = driven_representation(
                &mut tape,
                groups[0].z2,
                groups[1].z2,
                View::Target,
                &model.matching,
            )?;
            let inv = InvariantPreference {
                source_view: predictive_distribution(
                    &mut tape,
                    r_source,
                    View::Source,
                    &model.matching,
                )?,
                target_view: predictive_distribution(
                    &mut tape,
                    r_target,
                    View::Target,
                    &model.matching,
                )?,
            };
            matching_loss(&mut tape, &inv)?
        } else {
            tape.input(Tensor::scalar(0.0))?
        };
        (domain_loss, matching_term)
    } else {
        (
            tape.input(Tensor::scalar(0.0))?,
            tape.input(Tensor::scalar(0.0))?,
        )
    };

    let include_matching =
        variant.uses_matching() && (settings.include_matching || variant.ignores_warmup());
    let (optimized, breakdown) = total_loss(
        &mut tape,
        matching_term,
        domain_loss,
        user_losses[0],
        user_losses[1],
        include_matching,
    )?;
    Ok(ForwardOutcome {
        tape,
        optimized,
        breakdown,
    })
}

#[allow(clippy::too_many_arguments)]
fn batch_latents(
    tape: &mut Tape,
    model: &ModelParams,
    encoded: &EncodedNodes,
    plan: &BatchPlan,
    level1: &Level1Config,
    variant: Variant,
    settings: &ForwardSettings,
    user_eps_rng: &mut ChaCha8Rng,
    item_eps_rng: &mut ChaCha8Rng,
) -> Result<BatchLatents> {
    let user_idx = Rc::new(plan.user_rows.clone());
    let item_idx = Rc::new(plan.item_rows.clone());
    let h_users = tape.gather_rows(encoded.users, &user_idx)?;
    let h_items = tape.gather_rows(encoded.items, &item_idx)?;
    if !variant.uses_identifier() {
        return Ok(BatchLatents {
            z_users: h_users,
            z_items: h_items,
            user_posterior: None,
            item_posterior: None,
        });
    }
    let user_posterior = infer_level1(tape, h_users, &model.identifier, NodeKind::User, level1)?;
    let item_posterior = infer_level1(tape, h_items, &model.identifier, NodeKind::Item, level1)?;
    let user_eps = settings
        .sample_latents
        .then(|| noise_like(tape, &user_posterior, user_eps_rng));
    let item_eps = settings
        .sample_latents
        .then(|| noise_like(tape, &item_posterior, item_eps_rng));
    let z_users = sample(tape, &user_posterior, user_eps)?;
    let z_items = sample(tape, &item_posterior, item_eps)?;
    Ok(BatchLatents {
        z_users,
        z_items,
        user_posterior: Some(user_posterior),
        item_posterior: Some(item_posterior),
    })
}

#[allow(clippy::too_many_arguments)]
fn group_path(
    tape: &mut Tape,
    model: &ModelParams,
    encoded: &EncodedNodes,
    side: &DomainSide,
    group_size: usize,
    level1: &Level1Config,
    settings: &ForwardSettings,
    pick_rng: &mut ChaCha8Rng,
    z1_rng: &mut ChaCha8Rng,
    z2_rng: &mut ChaCha8Rng,
) -> Result<GroupPath> {
    let candidates = side.trainable_users();
    if group_size > candidates.len() {
        return Err(CoreError::Data(format!(
            "group size {group_size} exceeds the {} users with training edges",
            candidates.len()
        )));
    }
    let picks = sample_group(candidates.len(), group_size, pick_rng)?;
    let group: Vec<usize> = picks.into_iter().map(|p| candidates[p]).collect();
    let idx = Rc::new(group.clone());
    let rows = tape.gather_rows(encoded.users, &idx)?;
    let posterior1 = infer_level1(tape, rows, &model.identifier, NodeKind::User, level1)?;
    let eps1 = settings
        .sample_latents
        .then(|| noise_like(tape, &posterior1, z1_rng));
    let z1 = sample(tape, &posterior1, eps1)?;
    let posterior = infer_level2(tape, z1, &model.identifier)?;
    let eps2 = settings
        .sample_latents
        .then(|| noise_like(tape, &posterior, z2_rng));
    let z2 = sample(tape, &posterior, eps2)?;
    Ok(GroupPath {
        group,
        z1,
        posterior,
        z2,
    })
}

/// Standard normal prior by default; optionally a learned head over the
/// group's node-level latents.
fn level2_prior(tape: &mut Tape, model: &ModelParams, group: &GroupPath) -> Result<GaussianNode> {
    match &model.learned_prior {
        None => {
            let shape = tape.value(group.posterior.mean).shape();
            Ok(standard_normal_node(tape, shape[0], shape[1])?)
        }
        Some(prior) => {
            let mean = prior.mean.apply(tape, group.z1)?;
            let raw = prior.scale.apply(tape, group.z1)?;
            let soft = tape.softplus(raw)?;
            let scale = tape.clamp_min(soft, SCALE_FLOOR)?;
            Ok(GaussianNode { mean, scale })
        }
    }
}

/// Positives from the group users' training edges (subsampled to the batch
/// size) plus negatives drawn from the union of both item spaces; non-edges
/// across domains are always negatives.
#[allow(clippy::too_many_arguments)]
fn plan_domain_pairs(
    own: &DomainSide,
    other: &DomainSide,
    own_domain: usize,
    group: &[usize],
    batch_size: usize,
    negatives: usize,
    exact: bool,
    shuffle_rng: &mut ChaCha8Rng,
    neg_rng: &mut ChaCha8Rng,
) -> Result<Vec<RawDomainPair>> {
    let own_items = own.graph.item_count();
    let other_items = other.graph.item_count();
    let union = own_items + other_items;
    let other_domain = 1 - own_domain;
    let mut out = Vec::new();

    if exact {
        for (local, &u) in group.iter().enumerate() {
            let positives = &own.train_user_items[u];
            let degree = positives.len();
            if degree == 0 {
                continue;
            }
            let non_edges = union - degree;
            let neg_weight = negatives as f64 * degree as f64 / non_edges as f64;
            for v in 0..own_items {
                let positive = positives.contains(&v);
                out.push(RawDomainPair {
                    user_local: local,
                    item_domain: own_domain,
                    item: v,
                    label: if positive { 1.0 } else { 0.0 },
                    weight: if positive { 1.0 } else { neg_weight },
                });
            }
            for v in 0..other_items {
                out.push(RawDomainPair {
                    user_local: local,
                    item_domain: other_domain,
                    item: v,
                    label: 0.0,
                    weight: neg_weight,
                });
            }
        }
        return Ok(out);
    }

    let mut positives: Vec<(usize, usize)> = Vec::new();
    for (local, &u) in group.iter().enumerate() {
        for &v in &own.train_user_items[u] {
            positives.push((local, v));
        }
    }
    if positives.len() > batch_size {
        for i in 0..batch_size {
            let j = shuffle_rng.random_range(i..positives.len());
            positives.swap(i, j);
        }
        positives.truncate(batch_size);
    }

    for &(local, v) in &positives {
        out.push(RawDomainPair {
            user_local: local,
            item_domain: own_domain,
            item: v,
            label: 1.0,
            weight: 1.0,
        });
        let user = group[local];
        let user_positives = &own.train_user_items[user];
        let mut drawn: BTreeSet<usize> = BTreeSet::new();
        while drawn.len() < negatives.min(union - user_positives.len()) {
            let j = neg_rng.random_range(0..union);
            if j < own_items && user_positives.contains(&j) {
                continue;
            }
            if !drawn.insert(j) {
                continue;
            }
            let (item_domain, item) = if j < own_items {
                (own_domain, j)
            } else {
                (other_domain, j - own_items)
            };
            out.push(RawDomainPair {
                user_local: local,
                item_domain,
                item,
                label: 0.0,
                weight: 1.0,
            });
        }
    }
    Ok(out)
}
