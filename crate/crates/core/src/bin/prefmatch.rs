use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use prefmatch_core::data::{
    generate_synthetic, load_interactions, BipartiteGraph, SyntheticConfig,
};
use prefmatch_core::harness::{
    build_pair, evaluate, full_model_grad_check, outputs, popularity_baseline, toy_config,
    toy_pair, train, ConfigFile, Variant,
};
use prefmatch_core::model::ModelParams;
use prefmatch_tensor::StreamRng;

#[derive(Parser)]
#[command(
    name = "prefmatch",
    about = "Cross-domain cold-start recommendation via distributional preference matching",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.bin, losses.csv, and metrics.json.
    Train(TrainArgs),
    /// Evaluate a saved model on the held-out split.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic cross-domain dataset as CSV files.
    Synth(SynthArgs),
    /// Print interaction-log statistics.
    Stats(StatsArgs),
    /// Run the full-model finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

/// Command-line overrides mirroring configuration keys.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_cadence: Option<usize>,
    #[arg(long)]
    overlap_fraction: Option<f64>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    #[arg(long)]
    exact_reconstruction: bool,
    #[arg(long)]
    reaggregate_per_layer: bool,
}

impl Overrides {
    fn apply(&self, config: &mut ConfigFile) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(config.train.epochs, self.epochs);
        set!(config.train.warmup_epochs, self.warmup_epochs);
        set!(config.train.batch_size, self.batch_size);
        set!(config.train.group_size, self.group_size);
        set!(config.train.negatives, self.negatives);
        set!(config.train.learning_rate, self.learning_rate);
        set!(config.train.weight_decay, self.weight_decay);
        set!(config.train.beta, self.beta);
        set!(config.train.dropout, self.dropout);
        set!(config.model.embed_dim, self.embed_dim);
        set!(config.model.layers, self.layers);
        set!(config.model.heads, self.heads);
        set!(config.train.patience, self.patience);
        set!(config.eval.cadence, self.eval_cadence);
        set!(config.data.overlap_fraction, self.overlap_fraction);
        set!(config.data.eval_fraction, self.eval_fraction);
        set!(config.ablation, self.variant);
        if self.exact_reconstruction {
            config.train.exact_reconstruction = true;
        }
        if self.reaggregate_per_layer {
            config.model.reaggregate_per_layer = true;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seed for splits, initialization, and every sampling stream.
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also report the popularity baseline on the test split.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Saved model weights.
    #[arg(long)]
    model: PathBuf,
    /// Seed used when the model was trained (rebuilds the same split).
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Evaluate the validation split instead of test.
    #[arg(long)]
    validation: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    #[arg(long, default_value_t = 0.6)]
    affinity: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Shared identities across the domains (0 = two fifths of users).
    #[arg(long, default_value_t = 0)]
    overlap: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Interaction CSV file.
    #[arg(long)]
    input: PathBuf,
    /// Also report counts after threshold filtering.
    #[arg(long)]
    min_user: Option<usize>,
    #[arg(long)]
    min_item: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Use the built-in six-user/five-item pair.
    #[arg(long)]
    toy: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Central-difference step size.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Check a configured dataset instead of the toy pair (expensive).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Synth(args) => run_synth(args),
        Command::Stats(args) => run_stats(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ConfigFile> {
    let mut config = ConfigFile::from_path(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    args.overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn run_train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let config = load_config(&args.config)?;
    std::fs::create_dir_all(&args.out)?;
    let pair = build_pair(&config, args.seed)?;
    println!(
        "data: source {}x{} ({} edges), target {}x{} ({} edges), {} val / {} test users",
        pair.source.graph.user_count(),
        pair.source.graph.item_count(),
        pair.source.train_edges.len(),
        pair.target.graph.user_count(),
        pair.target.graph.item_count(),
        pair.target.train_edges.len(),
        pair.validation.len(),
        pair.test.len()
    );
    let outcome = train(&config, &pair, args.seed)?;

    outputs::write_losses_csv(&args.out.join("losses.csv"), &outcome.logs)?;
    outputs::write_metrics_json(&args.out.join("metrics.json"), &outcome.test_report)?;
    outputs::write_split_manifest(&args.out.join("split_manifest.json"), &pair)?;
    outcome.model.save(&args.out.join("model.bin"))?;

    if let (Some(report), Some(epoch)) = (&outcome.best_validation, outcome.best_epoch) {
        println!("best validation MRR {:.4} at epoch {epoch}", report.mrr);
    }
    let t = &outcome.test_report;
    println!(
        "test: MRR {:.4}  HR@10 {:.4}  NDCG@10 {:.4}  ({} users)",
        t.mrr,
        t.hr_at(10),
        t.ndcg_at(10),
        t.users
    );
    if args.baseline {
        let instances = if pair.test.is_empty() {
            &pair.validation
        } else {
            &pair.test
        };
        let base = popularity_baseline(&pair, instances, &config.eval.ks, args.seed)?;
        println!(
            "popularity baseline: MRR {:.4}  HR@10 {:.4}",
            base.mrr,
            base.hr_at(10)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run_evaluate(args: EvaluateArgs) -> anyhow::Result<ExitCode> {
    let config = load_config(&args.config)?;
    std::fs::create_dir_all(&args.out)?;
    let pair = build_pair(&config, args.seed)?;
    let mut model = ModelParams::init(
        config.dims(),
        pair.source.graph.user_count(),
        pair.source.graph.item_count(),
        pair.target.graph.user_count(),
        pair.target.graph.item_count(),
        config.model.learned_prior,
        &StreamRng::new(args.seed),
    )?;
    model.load(&args.model)?;
    let instances = if args.validation {
        &pair.validation
    } else {
        &pair.test
    };
    let report = evaluate(&model, &pair, instances, &config, args.seed)?;
    outputs::write_metrics_json(&args.out.join("metrics.json"), &report)?;
    println!(
        "{}: MRR {:.4}  HR@10 {:.4}  NDCG@10 {:.4}  ({} users)",
        if args.validation { "validation" } else { "test" },
        report.mrr,
        report.hr_at(10),
        report.ndcg_at(10),
        report.users
    );
    Ok(ExitCode::SUCCESS)
}

fn run_synth(args: SynthArgs) -> anyhow::Result<ExitCode> {
    let config = SyntheticConfig {
        users_per_domain: args.users,
        items_per_domain: args.items,
        clusters: args.clusters,
        affinity: args.affinity,
        noise: args.noise,
        overlap_users: args.overlap,
        cluster_weights: None,
        seed: args.seed,
    };
    let pair = generate_synthetic(&config)?;
    std::fs::create_dir_all(&args.out)?;
    for (name, records) in [
        ("source.csv", &pair.source_records),
        ("target.csv", &pair.target_records),
    ] {
        let mut file = File::create(args.out.join(name))?;
        writeln!(file, "user_id,item_id,timestamp")?;
        for r in records {
            writeln!(file, "{},{},{}", r.user_id, r.item_id, r.timestamp.unwrap_or(0))?;
        }
    }
    let overlap_pairs: Vec<(String, String)> = pair
        .overlap
        .iter()
        .map(|&(s, t)| {
            (
                pair.source.user_ids()[s].clone(),
                pair.target.user_ids()[t].clone(),
            )
        })
        .collect();
    let mut file = File::create(args.out.join("overlap.json"))?;
    writeln!(
        file,
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "seed": args.seed,
            "pairs": overlap_pairs,
        }))?
    )?;
    println!(
        "wrote {} source and {} target interactions, {} identities, to {}",
        pair.source_records.len(),
        pair.target_records.len(),
        pair.overlap.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_stats(args: StatsArgs) -> anyhow::Result<ExitCode> {
    let file = File::open(&args.input)
        .with_context(|| format!("cannot open {}", args.input.display()))?;
    let loaded = load_interactions(BufReader::new(file))?;
    let users: std::collections::BTreeSet<&str> =
        loaded.records.iter().map(|r| r.user_id.as_str()).collect();
    let items: std::collections::BTreeSet<&str> =
        loaded.records.iter().map(|r| r.item_id.as_str()).collect();
    println!("users: {}", users.len());
    println!("items: {}", items.len());
    println!("interactions: {}", loaded.records.len());
    println!("malformed: {}", loaded.malformed);
    if args.min_user.is_some() || args.min_item.is_some() {
        let graph = BipartiteGraph::build(
            &loaded.records,
            args.min_user.unwrap_or(5),
            args.min_item.unwrap_or(10),
            Default::default(),
        )?;
        println!(
            "filtered: users {} items {} interactions {}",
            graph.user_count(),
            graph.item_count(),
            graph.edge_count()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: GradcheckArgs) -> anyhow::Result<ExitCode> {
    let (config, pair) = match (&args.config, args.toy) {
        (Some(path), _) => {
            let config = ConfigFile::from_path(path)?;
            let pair = build_pair(&config, args.seed)?;
            (config, pair)
        }
        (None, _) => (toy_config(), toy_pair(args.seed)?),
    };
    let started = std::time::Instant::now();
    let outcome = full_model_grad_check(&config, &pair, args.seed, args.step)?;
    let elapsed = started.elapsed();
    println!(
        "max relative error: {:.3e} over {} entries in {} parameters ({:.2}s)",
        outcome.max_relative_error,
        outcome.entries_checked,
        outcome.parameter_count,
        elapsed.as_secs_f64()
    );
    if let Some((name, entry)) = &outcome.worst_entry {
        println!("worst entry: {name}[{entry}]");
    }
    if outcome.max_relative_error < args.tolerance {
        println!("PASS (tolerance {:.1e})", args.tolerance);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL (tolerance {:.1e})", args.tolerance);
        Ok(ExitCode::FAILURE)
    }
}
