//! Full-model finite-difference sweep: every trainable parameter entry is
//! perturbed and the analytic gradient compared against central differences,
//! with noise, negatives, and batches frozen to one fixed step.

use prefmatch_tensor::{grad_check, StreamRng, TensorError};

use crate::data::DomainPair;
use crate::error::Result;
use crate::harness::config::ConfigFile;
use crate::harness::forward::{forward_step, ForwardSettings, StepBatches};
use crate::model::ModelParams;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub max_relative_error: f64,
    pub worst_entry: Option<(String, usize)>,
    pub entries_checked: usize,
    pub parameter_count: usize,
}

pub fn full_model_grad_check(
    config: &ConfigFile,
    pair: &DomainPair,
    seed: u64,
    step_size: f64,
) -> Result<CheckOutcome> {
    let streams = StreamRng::new(seed);
    let model = ModelParams::init(
        config.dims(),
        pair.source.graph.user_count(),
        pair.source.graph.item_count(),
        pair.target.graph.user_count(),
        pair.target.graph.item_count(),
        config.model.learned_prior,
        &streams,
    )?;
    let batches = StepBatches {
        source: &pair.source.train_edges,
        target: &pair.target.train_edges,
    };
    let settings = ForwardSettings {
        include_matching: true,
        step: 0,
        seed,
        dropout: 0.0,
        sample_latents: true,
    };

    let mut store = model.store.clone();
    let parameter_count = store.len();
    let report = grad_check(
        &mut store,
        |params| {
            let outcome = forward_step(&model, params, pair, &batches, config, &settings)
                .map_err(|e| TensorError::Invalid(e.to_string()))?;
            let value = outcome.tape.scalar_value(outcome.optimized);
            let mut tape = outcome.tape;
            let grads = tape.backward(outcome.optimized)?;
            Ok((value, grads))
        },
        step_size,
    )?;
    Ok(CheckOutcome {
        max_relative_error: report.max_relative_error,
        worst_entry: report.worst_entry,
        entries_checked: report.entries_checked,
        parameter_count,
    })
}
