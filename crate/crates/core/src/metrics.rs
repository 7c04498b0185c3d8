use std::io::Write;

use serde::Serialize;

use crate::engine::MergeMode;
use crate::error::Result;
use crate::position::QueuingPolicy;
use crate::task::SimilarityLevel;

/// Merges performed, by level, plus declined candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MergeCounts {
    pub task: u64,
    pub data_op: u64,
    pub data_only: u64,
    pub declined: u64,
}

impl MergeCounts {
    pub fn add(&mut self, level: SimilarityLevel) {
        match level {
            SimilarityLevel::TaskLevel => self.task += 1,
            SimilarityLevel::DataAndOperation => self.data_op += 1,
            SimilarityLevel::DataOnly => self.data_only += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.task + self.data_op + self.data_only
    }
}

/// Lifecycle of one individual task.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskRecord {
    pub id: u64,
    /// Id of the compound it ran in (its own id if never merged).
    pub compound_id: u64,
    pub stream_id: u64,
    pub segment_idx: u32,
    pub arrival: f64,
    pub dispatch: f64,
    pub start: f64,
    pub completion: f64,
    pub deadline: f64,
    pub late: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mode: MergeMode,
    pub policy: QueuingPolicy,
    pub total_tasks: usize,
    pub misses: usize,
    pub dmr: f64,
    pub makespan: f64,
    pub merges: MergeCounts,
    /// Impact evaluations run (including heuristic probes).
    pub evaluations: u64,
    pub index_probes: u64,
    pub mean_osl: f64,
    /// `(time, raw OSL)` at every admission.
    pub osl_series: Vec<(f64, f64)>,
    /// Sorted by task id.
    pub records: Vec<TaskRecord>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    mode: &'a str,
    policy: &'a str,
    load: usize,
    dmr: f64,
    misses: usize,
    makespan: f64,
    merges_task: u64,
    merges_data_op: u64,
    merges_data_only: u64,
    declined: u64,
    evaluations: u64,
    mean_osl: f64,
}

impl MetricsReport {
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(SummaryRow {
            mode: self.mode.as_str(),
            policy: self.policy.as_str(),
            load: self.total_tasks,
            dmr: self.dmr,
            misses: self.misses,
            makespan: self.makespan,
            merges_task: self.merges.task,
            merges_data_op: self.merges.data_op,
            merges_data_only: self.merges.data_only,
            declined: self.merges.declined,
            evaluations: self.evaluations,
            mean_osl: self.mean_osl,
        })?;
        w.flush()?;
        Ok(())
    }

    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}
