//! Ground truth by execution: run task scripts on batches with their
//! assertion blocks enabled, label the outcome, and score decisions.

mod assertions;
mod bench;
mod cases;
mod metrics;
mod runner;
mod scenarios;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use assertions::{
    enable_single_block, find_blocks, reinsert_blocks, strip_assertions, AssertionBlock, END_SENTINEL, START_SENTINEL,
};
pub use bench::{decide, run_bench, Bench, BenchDataset, BenchManifest, BenchReport, BenchRun, DatasetEntry};
pub use cases::{
    eval_case, load_cases, CaseFixture, CaseSystem, EmptySystem, GroundTruthSystem, PipelineSystem, TaskAgnosticSystem,
};
pub use metrics::{evaluate, Counts, Decision, DecisionMatrix, Metrics, Scores};
pub use runner::{run_on_data, run_task, RunMode, RunOutcome, TaskArtifact, DEFAULT_TIMEOUT_SECS};
pub use scenarios::{make_scenarios, make_scenarios_grouped, split_sizes, Scenario, ScenarioSpec};

use crate::error::{Error, Result};
use crate::tabular::Batch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelValue {
    Safe,
    Erroneous,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub task_id: String,
    pub batch_id: String,
    pub value: LabelValue,
}

/// Erroneous iff the task, with every assertion enabled, exits non-zero or
/// times out.
pub fn label_batch(task: &TaskArtifact, batch: &Batch) -> Result<Label> {
    let out = run_task(task, batch, RunMode::AllAssertions)?;
    let value = if out.succeeded() {
        LabelValue::Safe
    } else {
        LabelValue::Erroneous
    };
    Ok(Label {
        task_id: task.id.clone(),
        batch_id: batch.id.clone(),
        value,
    })
}

pub fn save_labels(labels: &[Label], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(labels)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub mode: RunMode,
    pub message: String,
}

/// Run the clean sample with all blocks, with none, and with each block
/// alone; every run must exit 0.
pub fn verify_task(task: &TaskArtifact, sample: &Batch) -> Result<Vec<Defect>> {
    let blocks = find_blocks(&task.source()?)?;
    let modes = [RunMode::AllAssertions, RunMode::Stripped]
        .into_iter()
        .chain(blocks.iter().map(|b| RunMode::Single(b.index)));
    let mut defects = Vec::new();
    for mode in modes {
        let out = run_task(task, sample, mode)?;
        if !out.succeeded() {
            let tail: String = out.stderr.lines().last().unwrap_or_default().to_owned();
            let message = if out.timed_out {
                format!("timed out after {}s", task.timeout)
            } else {
                format!("exit {:?}: {tail}", out.exit_status)
            };
            defects.push(Defect { mode, message });
        }
    }
    Ok(defects)
}
