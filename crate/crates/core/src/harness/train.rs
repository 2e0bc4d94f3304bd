//! Training loop: per optimizer step, one edge minibatch per domain plus
//! freshly drawn user groups, with validation-driven model selection.

use prefmatch_tensor::{adam_step, AdamState, ParamStore, StreamRng};
use rand::Rng;

use crate::data::DomainPair;
use crate::error::{CoreError, Result};
use crate::harness::config::ConfigFile;
use crate::harness::eval::{evaluate, RankingReport};
use crate::harness::forward::{forward_step, ForwardSettings, StepBatches};
use crate::model::{ModelDims, ModelParams};
use crate::objectives::LossBreakdown;

/// One row of the loss log; written to `losses.csv`.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub matching: f64,
    pub domain: f64,
    pub user_source: f64,
    pub user_target: f64,
    pub total: f64,
    pub val_mrr: Option<f64>,
}

pub struct TrainOutcome {
    pub model: ModelParams,
    pub logs: Vec<EpochLog>,
    pub best_validation: Option<RankingReport>,
    pub best_epoch: Option<usize>,
    pub test_report: RankingReport,
}

/// Train on a prepared pair. Deterministic in `seed`: batching, group draws,
/// noise, negatives, and dropout all derive from it.
pub fn train(config: &ConfigFile, pair: &DomainPair, seed: u64) -> Result<TrainOutcome> {
    let streams = StreamRng::new(seed);
    let dims: ModelDims = config.dims();
    let mut model = ModelParams::init(
        dims,
        pair.source.graph.user_count(),
        pair.source.graph.item_count(),
        pair.target.graph.user_count(),
        pair.target.graph.item_count(),
        config.model.learned_prior,
        &streams,
    )?;
    let mut adam = AdamState::new(
        &model.store,
        config.train.learning_rate,
        config.train.weight_decay,
    );

    let batch_size = config.train.batch_size;
    let edge_counts = [pair.source.train_edges.len(), pair.target.train_edges.len()];
    let steps_per_epoch = edge_counts
        .iter()
        .map(|&e| e.div_ceil(batch_size))
        .max()
        .unwrap()
        .max(1);

    let mut logs = Vec::with_capacity(config.train.epochs);
    let mut best: Option<(f64, ParamStore, usize, RankingReport)> = None;
    let mut evals_since_best = 0usize;
    let mut global_step = 0u64;

    'epochs: for epoch in 0..config.train.epochs {
        let include_matching = epoch >= config.train.warmup_epochs;
        let source_order = shuffled_edges(&pair.source.train_edges, &streams, epoch, 0);
        let target_order = shuffled_edges(&pair.target.train_edges, &streams, epoch, 1);

        let mut sums = LossBreakdown {
            matching: 0.0,
            domain: 0.0,
            user_source: 0.0,
            user_target: 0.0,
            total: 0.0,
        };
        for step_in_epoch in 0..steps_per_epoch {
            let batches = StepBatches {
                source: cycle_chunk(&source_order, step_in_epoch, batch_size),
                target: cycle_chunk(&target_order, step_in_epoch, batch_size),
            };
            let settings = ForwardSettings {
                include_matching,
                step: global_step,
                seed,
                dropout: config.train.dropout,
                sample_latents: true,
            };
            let grads = {
                let outcome = forward_step(&model, &model.store, pair, &batches, config, &settings)
                    .map_err(|e| CoreError::Data(format!("epoch {epoch}: {e}")))?;
                let mut tape = outcome.tape;
                let grads = tape.backward(outcome.optimized)?;
                sums.matching += outcome.breakdown.matching;
                sums.domain += outcome.breakdown.domain;
                sums.user_source += outcome.breakdown.user_source;
                sums.user_target += outcome.breakdown.user_target;
                sums.total += outcome.breakdown.total;
                grads
            };
            adam_step(&mut model.store, &grads, &mut adam)?;
            global_step += 1;
        }
        let scale = 1.0 / steps_per_epoch as f64;
        let mut log = EpochLog {
            epoch,
            matching: sums.matching * scale,
            domain: sums.domain * scale,
            user_source: sums.user_source * scale,
            user_target: sums.user_target * scale,
            total: sums.total * scale,
            val_mrr: None,
        };

        let do_eval = (epoch + 1) % config.eval.cadence == 0 || epoch + 1 == config.train.epochs;
        if do_eval && !pair.validation.is_empty() {
            let report = evaluate(&model, pair, &pair.validation, config, seed)?;
            log.val_mrr = Some(report.mrr);
            let improved = best.as_ref().map_or(true, |(mrr, _, _, _)| report.mrr > *mrr);
            if improved {
                best = Some((report.mrr, model.store.clone(), epoch, report));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= config.train.patience {
                    logs.push(log);
                    break 'epochs;
                }
            }
        }
        logs.push(log);
    }

    let (best_validation, best_epoch) = match best {
        Some((_, store, epoch, report)) => {
            model.store.load_values(&store)?;
            (Some(report), Some(epoch))
        }
        None => (None, None),
    };
    let test_instances = if pair.test.is_empty() {
        &pair.validation
    } else {
        &pair.test
    };
    let test_report = evaluate(&model, pair, test_instances, config, seed)?;
    Ok(TrainOutcome {
        model,
        logs,
        best_validation,
        best_epoch,
        test_report,
    })
}

fn shuffled_edges(
    edges: &[(usize, usize)],
    streams: &StreamRng,
    epoch: usize,
    domain: u64,
) -> Vec<(usize, usize)> {
    // Epoch shuffles live in a counter range far above per-step slots.
    let mut rng = streams.stream_at("sampling", (1 << 40) + (epoch as u64) * 2 + domain);
    let mut order = edges.to_vec();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Chunk `step` of the shuffled list, wrapping around when one domain has
/// fewer batches than the other.
fn cycle_chunk(order: &[(usize, usize)], step: usize, batch_size: usize) -> &[(usize, usize)] {
    let chunks = order.len().div_ceil(batch_size).max(1);
    let index = step % chunks;
    let start = index * batch_size;
    &order[start..(start + batch_size).min(order.len())]
}
