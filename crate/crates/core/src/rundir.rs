//! Run-directory layout.
//!
//! ```text
//! <out>/
//!   config.json            resolved configuration, defaults materialized
//!   metrics.jsonl          one line per (iteration, stage, epoch, split)
//!   iter_<t>/record.json   per-iteration losses, K, clustering scores
//!   iter_<t>/merge_report.json   merged items with members (full mode only)
//!   checkpoints/final.json best model checkpoint
//!   report.json            test-split evaluation
//!   predictions.csv        per-sample test predictions
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::MergeMap;
use crate::dataset::LabelHierarchy;
use crate::error::{io_err, Error, Result};
use crate::pipeline::{EpochMetric, IterationRecord, PipelineOutcome, RunMode, StopReason};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RECORD_FILE: &str = "record.json";
pub const MERGE_REPORT_FILE: &str = "merge_report.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CHECKPOINT_FILE: &str = "final.json";
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// One merged item in the per-iteration merge report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedItemReport {
    pub merged_label: usize,
    pub parent_type: usize,
    pub exemplar_item: usize,
    pub exemplar_code: String,
    pub member_items: Vec<usize>,
    pub member_codes: Vec<String>,
    pub member_sample_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub iteration: usize,
    pub num_merged: usize,
    pub merged_items: Vec<MergedItemReport>,
}

/// Build the textual merge report from a merge map plus per-item training
/// sample counts.
pub fn merge_report(
    iteration: usize,
    merge: &MergeMap,
    hierarchy: &LabelHierarchy,
    train_counts: &[usize],
) -> MergeReport {
    let merged_items = (0..merge.num_merged)
        .map(|m| {
            let members = merge.members(m);
            MergedItemReport {
                merged_label: m,
                parent_type: merge.parent_of_merged[m],
                exemplar_item: merge.exemplar_of_merged[m],
                exemplar_code: hierarchy.item_codes[merge.exemplar_of_merged[m]].clone(),
                member_codes: members.iter().map(|&i| hierarchy.item_codes[i].clone()).collect(),
                member_sample_counts: members.iter().map(|&i| train_counts[i]).collect(),
                member_items: members,
            }
        })
        .collect();
    MergeReport {
        iteration,
        num_merged: merge.num_merged,
        merged_items,
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invalid(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err("write", path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err("read", path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_metrics(metrics: &[EpochMetric], path: &Path) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        let line = serde_json::to_string(m)
            .map_err(|e| Error::Invalid(format!("serialize metric line: {e}")))?;
        writeln!(out, "{line}").expect("write to string");
    }
    std::fs::write(path, out).map_err(io_err("write", path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetric>> {
    let text = std::fs::read_to_string(path).map_err(io_err("read", path))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

/// Summary of a run written alongside the records (stop reason, best iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: RunMode,
    pub stop_reason: StopReason,
    pub best_iteration: usize,
    pub iterations: usize,
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Persist everything the pipeline produced (except evaluation artifacts,
/// which the caller writes after scoring the test split).
pub fn write_outcome(
    outcome: &PipelineOutcome,
    hierarchy: &LabelHierarchy,
    train_counts: &[usize],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err("create", dir))?;
    write_metrics(&outcome.epoch_metrics, &dir.join(METRICS_FILE))?;
    write_json(
        &RunSummary {
            mode: outcome.mode,
            stop_reason: outcome.stop_reason,
            best_iteration: outcome.best_iteration,
            iterations: outcome.records.len(),
        },
        &dir.join(SUMMARY_FILE),
    )?;
    for record in &outcome.records {
        let iter_dir = dir.join(format!("iter_{}", record.iteration));
        std::fs::create_dir_all(&iter_dir).map_err(io_err("create", &iter_dir))?;
        write_json(record, &iter_dir.join(RECORD_FILE))?;
        if let Some(merge) = outcome.merges.get(record.iteration - 1) {
            let report = merge_report(record.iteration, merge, hierarchy, train_counts);
            write_json(&report, &iter_dir.join(MERGE_REPORT_FILE))?;
        }
    }
    Ok(())
}

/// Everything `inspect` needs from a run directory.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub summary: RunSummary,
    pub records: Vec<IterationRecord>,
    pub merge_reports: Vec<Option<MergeReport>>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
    let mut records = Vec::new();
    let mut merge_reports = Vec::new();
    for t in 1..=summary.iterations {
        let iter_dir = dir.join(format!("iter_{t}"));
        let record: IterationRecord = read_json(&iter_dir.join(RECORD_FILE))?;
        records.push(record);
        let merge_path = iter_dir.join(MERGE_REPORT_FILE);
        merge_reports.push(if merge_path.exists() {
            Some(read_json(&merge_path)?)
        } else {
            None
        });
    }
    Ok(LoadedRun {
        summary,
        records,
        merge_reports,
    })
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(CHECKPOINT_FILE)
}
