//! Build a split domain pair from a configuration: either the synthetic
//! generator or a pair of interaction files with an identity map.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Deserialize;

use crate::data::{
    generate_synthetic, load_interactions, make_splits, BipartiteGraph, DomainPair, SplitOptions,
};
use crate::error::{CoreError, Result};
use crate::harness::config::ConfigFile;

#[derive(Debug, Deserialize)]
struct OverlapFile {
    pairs: Vec<(String, String)>,
}

pub fn build_pair(config: &ConfigFile, seed: u64) -> Result<DomainPair> {
    let options = SplitOptions {
        overlap_fraction: config.data.overlap_fraction,
        eval_fraction: config.data.eval_fraction,
        normalization: config.data.normalization,
    };
    if let Some(synth) = &config.data.synthetic {
        let generated = generate_synthetic(synth)?;
        return make_splits(
            generated.source,
            generated.target,
            &generated.overlap,
            options,
            seed,
        );
    }
    let source_path = config.data.source.as_ref().expect("validated");
    let target_path = config.data.target.as_ref().expect("validated");
    let source = load_graph(source_path, config)?;
    let target = load_graph(target_path, config)?;
    let overlap = match &config.data.overlap {
        Some(path) => overlap_from_file(path, &source, &target)?,
        None => shared_id_overlap(&source, &target),
    };
    if overlap.len() < 2 {
        return Err(CoreError::Data(format!(
            "found {} overlapping identities; need at least 2 (provide data.overlap or share user ids)",
            overlap.len()
        )));
    }
    make_splits(source, target, &overlap, options, seed)
}

fn load_graph(path: &Path, config: &ConfigFile) -> Result<BipartiteGraph> {
    let file = File::open(path)
        .map_err(|e| CoreError::Data(format!("cannot open {}: {e}", path.display())))?;
    let loaded = load_interactions(BufReader::new(file))
        .map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
    BipartiteGraph::build(
        &loaded.records,
        config.data.min_user_interactions,
        config.data.min_item_interactions,
        config.data.normalization,
    )
}

fn overlap_from_file(
    path: &Path,
    source: &BipartiteGraph,
    target: &BipartiteGraph,
) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path)
        .map_err(|e| CoreError::Data(format!("cannot open {}: {e}", path.display())))?;
    let parsed: OverlapFile = serde_json::from_reader(BufReader::new(file))?;
    // Pairs whose users were filtered out of either graph are dropped.
    let pairs: Vec<(usize, usize)> = parsed
        .pairs
        .iter()
        .filter_map(|(s, t)| Some((source.user_index(s)?, target.user_index(t)?)))
        .collect();
    if pairs.is_empty() {
        return Err(CoreError::Data(format!(
            "no identity pair in {} survives graph filtering",
            path.display()
        )));
    }
    Ok(pairs)
}

/// Natural identities: user ids present in both domains.
fn shared_id_overlap(source: &BipartiteGraph, target: &BipartiteGraph) -> Vec<(usize, usize)> {
    let target_index: BTreeMap<&str, usize> = target
        .user_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    source
        .user_ids()
        .iter()
        .enumerate()
        .filter_map(|(si, id)| target_index.get(id.as_str()).map(|&ti| (si, ti)))
        .collect()
}
