//! Training loop, cold-start full-ranking evaluation, ablation wiring,
//! configuration, and the pieces behind the command-line interface.

pub mod checker;
pub mod config;
pub mod eval;
pub mod forward;
pub mod outputs;
pub mod setup;
pub mod toy;
pub mod train;

pub use checker::{full_model_grad_check, CheckOutcome};
pub use config::{ConfigFile, Variant};
pub use eval::{evaluate, popularity_baseline, rank_instances, RankingReport};
pub use setup::build_pair;
pub use toy::{toy_config, toy_pair};
pub use train::{train, EpochLog, TrainOutcome};
