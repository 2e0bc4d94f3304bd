//! Full-ranking cold-start evaluation: every target item is a candidate,
//! ties break toward the lower item index, and one held-out interaction per
//! user is the single relevant result.

use std::collections::BTreeMap;

use prefmatch_tensor::{Mode, Tape, Tensor};
use serde::Serialize;

use crate::data::{DomainPair, EvalInstance};
use crate::encoder::{encode, EncoderConfig};
use crate::error::{CoreError, Result};
use crate::harness::config::{ConfigFile, Variant};
use crate::identifier::{infer_level1, infer_level2, Level1Config, NodeKind};
use crate::model::ModelParams;

/// Rank metrics over one instance set.
#[derive(Clone, Debug, Serialize)]
pub struct RankingReport {
    pub domain: String,
    pub mrr: f64,
    pub ndcg: BTreeMap<String, f64>,
    pub hr: BTreeMap<String, f64>,
    pub users: usize,
    pub seed: u64,
}

impl RankingReport {
    pub fn hr_at(&self, k: usize) -> f64 {
        self.hr[&k.to_string()]
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg[&k.to_string()]
    }
}

/// Score every candidate for each instance, rank descending with ties broken
/// by ascending item index, and accumulate MRR/NDCG@K/HR@K.
pub fn rank_instances(
    instances: &[EvalInstance],
    item_count: usize,
    ks: &[usize],
    seed: u64,
    domain: &str,
    mut score_row: impl FnMut(&EvalInstance) -> Vec<f64>,
) -> Result<RankingReport> {
    if instances.is_empty() {
        return Err(CoreError::Data("no evaluation instances".into()));
    }
    let mut mrr = 0.0;
    let mut hr: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut ndcg: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();

    for instance in instances {
        let scores = score_row(instance);
        if scores.len() != item_count {
            return Err(CoreError::Data(format!(
                "score row has {} entries, expected {item_count}",
                scores.len()
            )));
        }
        let mut candidates: Vec<(f64, usize)> = (0..item_count)
            .filter(|i| !instance.excluded_items.contains(i))
            .map(|i| (scores[i], i))
            .collect();
        candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let rank = 1 + candidates
            .iter()
            .position(|&(_, i)| i == instance.held_out_item)
            .ok_or_else(|| {
                CoreError::Data(format!(
                    "held-out item {} missing from candidates",
                    instance.held_out_item
                ))
            })?;
        mrr += 1.0 / rank as f64;
        for &k in ks {
            if rank <= k {
                *hr.get_mut(&k).unwrap() += 1.0;
                *ndcg.get_mut(&k).unwrap() += 1.0 / ((1 + rank) as f64).log2();
            }
        }
    }

    let n = instances.len() as f64;
    Ok(RankingReport {
        domain: domain.to_string(),
        mrr: mrr / n,
        ndcg: ndcg
            .into_iter()
            .map(|(k, v)| (k.to_string(), v / n))
            .collect(),
        hr: hr
            .into_iter()
            .map(|(k, v)| (k.to_string(), v / n))
            .collect(),
        users: instances.len(),
        seed,
    })
}

/// Cold-start scores for all (source user, target item) combinations under
/// the given variant, in evaluation mode: posterior means, no dropout, the
/// full source adjacency (test users' history is visible), and the
/// training-only target adjacency.
pub fn score_matrix(model: &ModelParams, pair: &DomainPair, config: &ConfigFile) -> Result<Tensor> {
    let encoder_config = EncoderConfig {
        layers: model.dims.layers,
        reaggregate_per_layer: config.model.reaggregate_per_layer,
    };
    let level1 = Level1Config {
        activation: config.model.sigma1_activation,
        scale_multiplier: config.model.sigma1_scale,
    };
    let mut tape = Tape::new(&model.store, Mode::Eval);
    let source_enc = encode(
        &mut tape,
        pair.source.graph.normalized(),
        &model.source_encoder,
        &encoder_config,
    )?;
    let target_enc = encode(
        &mut tape,
        &pair.target.train_normalized,
        &model.target_encoder,
        &encoder_config,
    )?;

    let (users, items) = match config.ablation {
        Variant::A => (source_enc.users, target_enc.items),
        Variant::B => {
            let u = infer_level1(
                &mut tape,
                source_enc.users,
                &model.identifier,
                NodeKind::User,
                &level1,
            )?;
            let v = infer_level1(
                &mut tape,
                target_enc.items,
                &model.identifier,
                NodeKind::Item,
                &level1,
            )?;
            (u.mean, v.mean)
        }
        Variant::Full | Variant::C | Variant::D => {
            let u1 = infer_level1(
                &mut tape,
                source_enc.users,
                &model.identifier,
                NodeKind::User,
                &level1,
            )?;
            let u2 = infer_level2(&mut tape, u1.mean, &model.identifier)?;
            let v1 = infer_level1(
                &mut tape,
                target_enc.items,
                &model.identifier,
                NodeKind::Item,
                &level1,
            )?;
            let projected = model.item_projection.apply(&mut tape, v1.mean)?;
            (u2.mean, projected)
        }
    };
    let items_t = tape.transpose(items)?;
    let logits = tape.matmul(users, items_t)?;
    let probabilities = tape.sigmoid(logits)?;
    Ok(tape.value(probabilities).clone())
}

/// Rank with the trained model.
pub fn evaluate(
    model: &ModelParams,
    pair: &DomainPair,
    instances: &[EvalInstance],
    config: &ConfigFile,
    seed: u64,
) -> Result<RankingReport> {
    let scores = score_matrix(model, pair, config)?;
    rank_instances(
        instances,
        pair.target.graph.item_count(),
        &config.eval.ks,
        seed,
        "target",
        |instance| scores.row(instance.source_user).to_vec(),
    )
}

/// Rank by training interaction counts; identical protocol otherwise.
pub fn popularity_baseline(
    pair: &DomainPair,
    instances: &[EvalInstance],
    ks: &[usize],
    seed: u64,
) -> Result<RankingReport> {
    let counts: Vec<f64> = {
        let mut deg = vec![0.0; pair.target.graph.item_count()];
        for &(_, i) in &pair.target.train_edges {
            deg[i] += 1.0;
        }
        deg
    };
    rank_instances(
        instances,
        pair.target.graph.item_count(),
        ks,
        seed,
        "target",
        |_| counts.clone(),
    )
}
