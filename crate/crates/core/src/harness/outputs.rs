//! File outputs: loss log CSV, metrics JSON, and the split manifest.

use std::io::Write;
use std::path::Path;

use crate::data::DomainPair;
use crate::error::Result;
use crate::harness::eval::RankingReport;
use crate::harness::train::EpochLog;

pub fn write_losses_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,L_m,L_d,L_u_source,L_u_target,total,val_mrr\n");
    for log in logs {
        let val = log.val_mrr.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            log.epoch, log.matching, log.domain, log.user_source, log.user_target, log.total, val
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_metrics_json(path: &Path, report: &RankingReport) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let json = serde_json::to_string_pretty(report)?;
    writeln!(file, "{json}")?;
    Ok(())
}

pub fn write_split_manifest(path: &Path, pair: &DomainPair) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let json = serde_json::to_string_pretty(&pair.manifest())?;
    writeln!(file, "{json}")?;
    Ok(())
}
